"""Training loop, validation, and checkpoint-based prediction."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import checkpoint
from .dataset import MURMUR_CLASSES, OUTCOME_CLASSES, PatientRecord, sample_states, window
from .dsp import AugmentConfig, BandpassSpec, PreprocessConfig, Waveform, augment, preprocess
from .losses import AslParams, LossWeights, MtlTargets, frame_targets, mtl_loss
from .model import BackboneConfig, MtlModel, build, model_from_config
from .optim import AdamW, EarlyStopping, OneCycleSpec, onecycle_lr
from .scoring import PatientPrediction, ScoreReport, aggregate_murmur, aggregate_outcome, score
from .tensor import no_grad

log = logging.getLogger(__name__)

LOG_COLUMNS = (
    "epoch", "loss_total", "loss_murmur", "loss_outcome", "loss_seg",
    "val_murmur_wacc", "val_outcome_cost", "val_outcome_wacc", "lr",
)


@dataclass
class TrainConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    heads: str = "MTL3"
    loss: str = "B"
    batch_size: int = 32
    max_epochs: int = 60
    freeze_epoch: int = 30
    seed: int = 0
    window_s: float = 15.0
    fs: int = 1000
    max_lr: float = 1e-3
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    min_delta: float = 1e-4
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    asl: AslParams = field(default_factory=AslParams)

    def validate(self) -> None:
        self.backbone.validate()
        if self.heads not in ("MTL2", "MTL3"):
            raise ValueError(f"heads must be MTL2 or MTL3, got {self.heads!r}")
        if self.loss not in ("A", "B"):
            raise ValueError(f"loss must be 'A' or 'B', got {self.loss!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0 <= self.freeze_epoch <= self.max_epochs:
            raise ValueError("freeze_epoch must lie in [0, max_epochs]")
        if self.window_samples % self.backbone.total_stride:
            raise ValueError(
                f"window of {self.window_samples} samples is not divisible by the "
                f"backbone stride {self.backbone.total_stride}"
            )

    @property
    def window_samples(self) -> int:
        return int(round(self.window_s * self.fs))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["backbone"] = self.backbone.to_dict()
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        nested = {
            "backbone": BackboneConfig,
            "augment": AugmentConfig,
            "loss_weights": LossWeights,
            "asl": AslParams,
        }
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown run config keys: {unknown}")
        kwargs = {}
        for key, value in d.items():
            if key in nested:
                if not isinstance(value, dict):
                    raise ValueError(f"run config key {key!r} must be an object")
                sub = nested[key]
                sub_known = {f.name for f in dataclasses.fields(sub)}
                bad = sorted(set(value) - sub_known)
                if bad:
                    raise ValueError(f"unknown keys in run config section {key!r}: {bad}")
                value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
                kwargs[key] = sub(**value)
            else:
                kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class EpochLog:
    epoch: int
    loss_total: float
    loss_murmur: float
    loss_outcome: float
    loss_seg: float
    val_murmur_wacc: float
    val_outcome_cost: float
    val_outcome_wacc: float
    lr: float

    def row(self) -> List[str]:
        return [str(self.epoch)] + [repr(float(getattr(self, c))) for c in LOG_COLUMNS[1:]]


def write_log_csv(path: Union[str, Path], logs: Sequence[EpochLog]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for entry in logs:
            writer.writerow(entry.row())


def read_log_csv(path: Union[str, Path]) -> List[EpochLog]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            EpochLog(int(r["epoch"]), *(float(r[c]) for c in LOG_COLUMNS[1:]))
            for r in reader
        ]


@dataclass
class PreparedRecording:
    patient_id: str
    samples: np.ndarray
    states: np.ndarray
    murmur: int
    outcome: int


def prepare(patients: Sequence[PatientRecord], fs: int = 1000) -> List[PreparedRecording]:
    cfg = PreprocessConfig(fs=fs, bandpass=BandpassSpec())
    out = []
    for p in patients:
        for r in p.recordings:
            w = preprocess(r.waveform, cfg)
            out.append(
                PreparedRecording(
                    patient_id=p.id,
                    samples=w.samples,
                    states=sample_states(r.segments, len(w), fs),
                    murmur=r.murmur.class_index,
                    outcome=p.outcome.class_index,
                )
            )
    return out


def make_batch(recs: Sequence[PreparedRecording], cfg: TrainConfig, rng: np.random.Generator):
    """One random training crop per recording, augmented."""
    xs, states = [], []
    for r in recs:
        x, s = window(r.samples, r.states, cfg.window_samples, train=True, rng=rng)[0]
        xs.append(augment(Waveform(x, cfg.fs), cfg.augment, rng).samples)
        states.append(s)
    x = np.stack(xs)[:, None, :]
    targets = MtlTargets(
        murmur=np.array([r.murmur for r in recs]),
        outcome=np.array([r.outcome for r in recs]),
        seg_frames=frame_targets(np.stack(states), cfg.backbone.total_stride),
    )
    return x, targets


def recording_logits(model: MtlModel, recs: Sequence[PreparedRecording], window_samples: int,
                     batch_size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Window-averaged murmur (R, 3) and outcome (R, 2) logits, eval mode, no augmentation."""
    tiles, owner = [], []
    for i, r in enumerate(recs):
        for x, _ in window(r.samples, None, window_samples, train=False):
            tiles.append(x)
            owner.append(i)
    owner = np.array(owner)
    was_training = model.training
    model.eval()
    m_logits, o_logits = [], []
    with no_grad():
        for start in range(0, len(tiles), batch_size):
            x = np.stack(tiles[start : start + batch_size])[:, None, :]
            out = model(x)
            m_logits.append(out.murmur_logits.data)
            o_logits.append(out.outcome_logits.data)
    model.train(was_training)
    m_all, o_all = np.concatenate(m_logits), np.concatenate(o_logits)
    m = np.stack([m_all[owner == i].mean(axis=0) for i in range(len(recs))])
    o = np.stack([o_all[owner == i].mean(axis=0) for i in range(len(recs))])
    return m, o


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def patient_predictions(recs: Sequence[PreparedRecording], m_logits: np.ndarray,
                        o_logits: np.ndarray) -> Dict[str, PatientPrediction]:
    by_patient: Dict[str, List[int]] = {}
    for i, r in enumerate(recs):
        by_patient.setdefault(r.patient_id, []).append(i)
    out = {}
    for pid, idx in by_patient.items():
        murmur = aggregate_murmur([MURMUR_CLASSES[int(np.argmax(m_logits[i]))] for i in idx])
        outcome = aggregate_outcome([OUTCOME_CLASSES[int(np.argmax(o_logits[i]))] for i in idx])
        out[pid] = PatientPrediction(
            id=pid,
            murmur=murmur,
            outcome=outcome,
            murmur_probs=tuple(_sigmoid(m_logits[idx]).mean(axis=0).tolist()),
            outcome_probs=tuple(_sigmoid(o_logits[idx]).mean(axis=0).tolist()),
        )
    return out


def evaluate(model: MtlModel, recs: Sequence[PreparedRecording], patients: Sequence[PatientRecord],
             cfg: TrainConfig) -> ScoreReport:
    m, o = recording_logits(model, recs, cfg.window_samples, cfg.batch_size)
    preds = patient_predictions(recs, m, o)
    truth = {p.id: (p.murmur, p.outcome) for p in patients}
    return score(truth, {pid: (pp.murmur, pp.outcome) for pid, pp in preds.items()})


def _checkpoint_meta(model: MtlModel, cfg: TrainConfig, **extra) -> dict:
    return {"model": model.config_dict(), "train": cfg.to_dict(), **extra}


def save_model(path: Union[str, Path], model: MtlModel, cfg: TrainConfig, **extra) -> None:
    checkpoint.save_arrays(path, model.state_dict(), _checkpoint_meta(model, cfg, **extra))


def load_model(path: Union[str, Path]) -> Tuple[MtlModel, TrainConfig, dict]:
    arrays, meta = checkpoint.load_arrays(path)
    model = model_from_config(meta["model"])
    model.load_state_dict(arrays)
    cfg = TrainConfig.from_dict(meta["train"])
    return model, cfg, meta


@dataclass
class TrainResult:
    logs: List[EpochLog]
    best_epoch: int
    best_murmur_wacc: float
    model: MtlModel


def train(
    cfg: TrainConfig,
    train_patients: Sequence[PatientRecord],
    val_patients: Sequence[PatientRecord],
    out_dir: Optional[Union[str, Path]] = None,
    resume: bool = False,
) -> TrainResult:
    """Train an MTL model; the returned model carries the best-validation weights.

    With ``out_dir`` set, writes ``best.ckpt``, ``last.ckpt`` (with optimizer
    state, for ``resume``), ``epochs.csv``, ``config.json`` and ``model.json``.
    """
    cfg.validate()
    if not train_patients:
        raise ValueError("training set is empty")
    overlap = {p.id for p in train_patients} & {p.id for p in val_patients}
    if overlap:
        raise ValueError(f"patients in both training and validation sets: {sorted(overlap)[:5]}")

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    train_recs = prepare(train_patients, cfg.fs)
    val_recs = prepare(val_patients, cfg.fs)

    model = build(cfg.backbone, cfg.heads, seed=cfg.seed)
    opt = AdamW(
        model.named_parameters(), lr=cfg.max_lr, beta1=cfg.beta1, beta2=cfg.beta2,
        eps=cfg.eps, weight_decay=cfg.weight_decay,
    )
    steps_per_epoch = math.ceil(len(train_recs) / cfg.batch_size)
    schedule = OneCycleSpec(
        max_lr=cfg.max_lr, total_steps=cfg.max_epochs * steps_per_epoch,
        pct_start=cfg.pct_start, div_factor=cfg.div_factor, final_div_factor=cfg.final_div_factor,
    )
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    logs: List[EpochLog] = []
    best_epoch, best_wacc, best_state = 0, -math.inf, None
    start_epoch = 0

    if resume:
        if out is None or not (out / "last.ckpt").is_file():
            raise FileNotFoundError("resume requested but no last.ckpt in the run directory")
        arrays, meta = checkpoint.load_arrays(out / "last.ckpt")
        if meta["train"] != cfg.to_dict():
            raise ValueError("run config differs from the checkpointed run; cannot resume")
        model.load_state_dict(arrays)
        opt.load_state(arrays, meta["optim_steps"])
        if meta["frozen"]:
            model.freeze_backbone()
        start_epoch = meta["epoch"]
        stopper.best, stopper.bad_epochs = meta["stopper_best"], meta["stopper_bad"]
        best_epoch, best_wacc = meta["best_epoch"], meta["best_wacc"]
        best_arrays, _ = checkpoint.load_arrays(out / "best.ckpt")
        best_state = {k: v for k, v in best_arrays.items()}
        logs = read_log_csv(out / "epochs.csv")[:start_epoch]
        if meta.get("stopped"):
            start_epoch = cfg.max_epochs

    if out is not None:
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        (out / "model.json").write_text(model.config_json() + "\n")

    step = start_epoch * steps_per_epoch
    for epoch in range(start_epoch, cfg.max_epochs):
        if epoch >= cfg.freeze_epoch and not model.backbone_frozen:
            model.freeze_backbone()
        model.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_recs))
        sums = {"total": 0.0, "murmur": 0.0, "outcome": 0.0, "seg": 0.0}
        lr = onecycle_lr(schedule, step)
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            rng = np.random.default_rng([cfg.seed, epoch, b])
            x, targets = make_batch([train_recs[i] for i in idx], cfg, rng)
            lr = onecycle_lr(schedule, step)
            output = model(x)
            loss, parts = mtl_loss(output, targets, cfg.loss_weights, cfg.loss, cfg.asl)
            if not math.isfinite(parts["total"]):
                raise FloatingPointError(f"non-finite loss at epoch {epoch + 1}, step {b + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            step += 1
            for k in sums:
                sums[k] += parts[k]

        if val_recs:
            report = evaluate(model, val_recs, val_patients, cfg)
            wacc, cost, owacc = (
                report.murmur_weighted_accuracy, report.outcome_cost, report.outcome_weighted_accuracy,
            )
        else:
            wacc = cost = owacc = float("nan")
        entry = EpochLog(
            epoch=epoch + 1,
            loss_total=sums["total"] / steps_per_epoch,
            loss_murmur=sums["murmur"] / steps_per_epoch,
            loss_outcome=sums["outcome"] / steps_per_epoch,
            loss_seg=sums["seg"] / steps_per_epoch,
            val_murmur_wacc=wacc,
            val_outcome_cost=cost,
            val_outcome_wacc=owacc,
            lr=lr,
        )
        logs.append(entry)
        log.info(
            "epoch %d/%d loss %.4f val murmur wacc %.3f outcome wacc %.3f cost %.0f",
            epoch + 1, cfg.max_epochs, entry.loss_total, wacc, owacc, cost,
        )

        score_now = wacc if math.isfinite(wacc) else -math.inf
        if best_state is None or score_now > best_wacc:
            best_epoch, best_wacc = epoch + 1, score_now
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            if out is not None:
                save_model(out / "best.ckpt", model, cfg, epoch=epoch + 1, val_murmur_wacc=wacc)
        stop = stopper.update(wacc) if math.isfinite(wacc) else False

        if out is not None:
            write_log_csv(out / "epochs.csv", logs)
            arrays = dict(model.state_dict())
            arrays.update(opt.state_arrays())
            checkpoint.save_arrays(
                out / "last.ckpt",
                arrays,
                _checkpoint_meta(
                    model, cfg, epoch=epoch + 1, optim_steps=dict(opt.t), frozen=model.backbone_frozen,
                    stopper_best=stopper.best, stopper_bad=stopper.bad_epochs,
                    best_epoch=best_epoch, best_wacc=best_wacc, stopped=stop,
                ),
            )
        if stop:
            log.info("early stopping after epoch %d", epoch + 1)
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    return TrainResult(logs=logs, best_epoch=best_epoch, best_murmur_wacc=best_wacc, model=model)


def predict(checkpoint_path: Union[str, Path], patients: Sequence[PatientRecord]):
    """Per-patient predictions plus per-recording class probabilities.

    Returns ``(patient_predictions, recording_probs)`` where ``recording_probs``
    maps a recording stem to its (murmur, outcome) sigmoid probabilities.
    """
    model, cfg, _ = load_model(checkpoint_path)
    recs = prepare(patients, cfg.fs)
    m, o = recording_logits(model, recs, cfg.window_samples, cfg.batch_size)
    preds = patient_predictions(recs, m, o)
    stems = [r.stem or f"{p.id}_{r.location}" for p in patients for r in p.recordings]
    rec_probs = {s: (_sigmoid(m[i]).tolist(), _sigmoid(o[i]).tolist()) for i, s in enumerate(stems)}
    return [preds[p.id] for p in patients], rec_probs
