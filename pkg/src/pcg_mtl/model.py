"""Multi-task network: one shared 1-D CNN backbone, pooled murmur and outcome
heads, and an optional frame-wise segmentation head on the unpooled features.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .nn import BatchNorm1d, Conv1d, Linear, Module
from .tensor import Tensor

FAMILIES = ("se_resnet", "multibranch")
HEAD_MODES = ("MTL2", "MTL3")
N_MURMUR = 3
N_OUTCOME = 2
N_SEG = 5


def scale_kernel(kernel: int, scale: int) -> int:
    """Multiply a kernel size and round up to the next odd integer."""
    k = kernel * scale
    return k if k % 2 == 1 else k + 1


@dataclass
class BackboneConfig:
    family: str = "se_resnet"
    widths: Tuple[int, ...] = (16, 32, 64)
    blocks_per_stage: int = 2
    stem_kernel: int = 7
    block_kernel: int = 3
    branch_kernels: Tuple[int, ...] = (11, 21, 41)
    kernel_scale: int = 2
    se_reduction: int = 8
    head_hidden: int = 64

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.branch_kernels = tuple(int(k) for k in self.branch_kernels)

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown backbone family {self.family!r}; expected one of {FAMILIES}")
        ints = list(self.widths) + list(self.branch_kernels) + [
            self.blocks_per_stage, self.stem_kernel, self.block_kernel,
            self.kernel_scale, self.se_reduction, self.head_hidden,
        ]
        if not self.widths or any(v <= 0 for v in ints):
            raise ValueError("backbone widths, depths and kernel sizes must be positive")

    @property
    def total_stride(self) -> int:
        # stride-2 stem plus a stride-2 pool between consecutive stages
        return 2 ** len(self.widths)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        d["branch_kernels"] = list(self.branch_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            warnings.warn(f"ignoring unknown backbone config fields: {unknown}")
        return cls(**{k: v for k, v in d.items() if k in known})


class SqueezeExcite(Module):
    def __init__(self, channels: int, reduction: int, rng):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        s = T.global_avg_pool(x)
        s = T.sigmoid(self.fc2(T.relu(self.fc1(s))))
        return x * T.reshape(s, s.shape + (1,))


class SEResBlock(Module):
    """conv-BN-ReLU-conv-BN, squeeze-excitation, residual add, ReLU."""

    def __init__(self, c_in: int, c_out: int, kernel: int, reduction: int, rng):
        super().__init__()
        self.conv1 = Conv1d(c_in, c_out, kernel, rng, bias=False)
        self.bn1 = BatchNorm1d(c_out)
        self.conv2 = Conv1d(c_out, c_out, kernel, rng, bias=False)
        self.bn2 = BatchNorm1d(c_out)
        self.se = SqueezeExcite(c_out, reduction, rng)
        if c_in != c_out:
            self.proj = Conv1d(c_in, c_out, 1, rng, bias=False)
            self.proj_bn = BatchNorm1d(c_out)
        else:
            self.proj = None

    def forward(self, x: Tensor) -> Tensor:
        y = T.relu(self.bn1(self.conv1(x)))
        y = self.se(self.bn2(self.conv2(y)))
        skip = x if self.proj is None else self.proj_bn(self.proj(x))
        return T.relu(y + skip)


class Stem(Module):
    def __init__(self, c_out: int, kernel: int, rng):
        super().__init__()
        self.conv = Conv1d(1, c_out, kernel, rng, stride=2, bias=False)
        self.bn = BatchNorm1d(c_out)

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(self.bn(self.conv(x)))


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        s = cfg.kernel_scale
        if cfg.family == "se_resnet":
            self.stems = [Stem(cfg.widths[0], scale_kernel(cfg.stem_kernel, s), rng)]
            c = cfg.widths[0]
        else:
            self.stems = [Stem(cfg.widths[0], scale_kernel(k, s), rng) for k in cfg.branch_kernels]
            c = cfg.widths[0] * len(cfg.branch_kernels)
        kernel = scale_kernel(cfg.block_kernel, s)
        self.stages = []
        for width in cfg.widths:
            blocks = []
            for _ in range(cfg.blocks_per_stage):
                blocks.append(SEResBlock(c, width, kernel, cfg.se_reduction, rng))
                c = width
            self.stages.append(_Stage(blocks))
        self.out_channels = c

    def forward(self, x: Tensor) -> Tensor:
        if len(self.stems) == 1:
            h = self.stems[0](x)
        else:
            h = T.concat([stem(x) for stem in self.stems], axis=1)
        for i, stage in enumerate(self.stages):
            if i > 0:
                h = T.avg_pool1d(h, 2)
            h = stage(h)
        return h


class _Stage(Module):
    def __init__(self, blocks: List[Module]):
        super().__init__()
        self.blocks = blocks

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class ClassifierHead(Module):
    def __init__(self, n_in: int, hidden: int, n_out: int, rng):
        super().__init__()
        self.fc1 = Linear(n_in, hidden, rng)
        self.fc2 = Linear(hidden, n_out, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class SegmentationHead(Module):
    """Two frame-wise (kernel 1) layers on the unpooled backbone features."""

    def __init__(self, n_in: int, hidden: int, rng):
        super().__init__()
        self.conv1 = Conv1d(n_in, hidden, 1, rng)
        self.conv2 = Conv1d(hidden, N_SEG, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(T.relu(self.conv1(x)))


@dataclass
class ModelOutput:
    murmur_logits: Tensor
    outcome_logits: Tensor
    seg_logits: Optional[Tensor] = None


class MtlModel(Module):
    def __init__(self, cfg: BackboneConfig, heads: str = "MTL3", seed: int = 0):
        super().__init__()
        if heads not in HEAD_MODES:
            raise ValueError(f"unknown head configuration {heads!r}; expected one of {HEAD_MODES}")
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.heads = heads
        self.backbone = Backbone(cfg, rng)
        c = self.backbone.out_channels
        self.murmur_head = ClassifierHead(c, cfg.head_hidden, N_MURMUR, rng)
        self.outcome_head = ClassifierHead(c, cfg.head_hidden, N_OUTCOME, rng)
        self.segmentation_head = SegmentationHead(c, cfg.head_hidden, rng) if heads == "MTL3" else None
        self.backbone_frozen = False
        self.backbone_calls = 0

    @property
    def total_stride(self) -> int:
        return self.cfg.total_stride

    def forward(self, x) -> ModelOutput:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3 or x.shape[1] != 1:
            raise ValueError(f"expected input of shape (N, 1, L), got {x.shape}")
        if x.shape[2] % self.total_stride:
            raise ValueError(
                f"input length {x.shape[2]} is not divisible by the backbone stride {self.total_stride}"
            )
        feats = self.backbone(x)
        self.backbone_calls += 1
        pooled = T.global_avg_pool(feats)
        return ModelOutput(
            murmur_logits=self.murmur_head(pooled),
            outcome_logits=self.outcome_head(pooled),
            seg_logits=None if self.segmentation_head is None else self.segmentation_head(feats),
        )

    def train(self, mode: bool = True) -> "MtlModel":
        super().train(mode)
        if self.backbone_frozen:
            # frozen backbone keeps its batch-norm statistics fixed too
            self.backbone.train(False)
        return self

    def backbone_parameters(self):
        return self.backbone.parameters()

    def freeze_backbone(self) -> None:
        self.backbone_frozen = True
        for p in self.backbone.parameters():
            p.requires_grad = False
            p.grad = None
        self.backbone.train(False)

    def unfreeze_backbone(self) -> None:
        self.backbone_frozen = False
        for p in self.backbone.parameters():
            p.requires_grad = True
        self.backbone.train(self.training)

    def config_dict(self) -> dict:
        return {"backbone": self.cfg.to_dict(), "heads": self.heads}

    def config_json(self) -> str:
        return json.dumps(self.config_dict(), indent=2, sort_keys=True)


def build(cfg: BackboneConfig, heads: str = "MTL3", seed: int = 0) -> MtlModel:
    return MtlModel(cfg, heads, seed)


def model_from_config(d: dict, seed: int = 0) -> MtlModel:
    """Rebuild an architecture from its JSON description (unknown keys ignored)."""
    return MtlModel(BackboneConfig.from_dict(d.get("backbone", {})), d.get("heads", "MTL3"), seed)
