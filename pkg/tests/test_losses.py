import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _gradcheck import check
from pcg_mtl import tensor as T
from pcg_mtl.losses import (
    AslParams,
    LossWeights,
    MtlTargets,
    frame_targets,
    loss_a,
    loss_b,
    loss_seg,
    mtl_loss,
)
from pcg_mtl.model import BackboneConfig, ModelOutput, build
from pcg_mtl.tensor import Tensor, backward

TOL = 1e-5


def bce_oracle(z, target, w):
    """Direct evaluation of the weighted one-vs-rest BCE formula."""
    n, k = z.shape
    total = 0.0
    for i in range(n):
        for c in range(k):
            p = 1 / (1 + math.exp(-z[i, c]))
            if c == target[i]:
                total += w[c] * -math.log(p)
            else:
                total += -math.log(1 - p)
    return total / (n * k)


def asl_oracle(z, target, gp, gn, m):
    n, k = z.shape
    total = 0.0
    for i in range(n):
        for c in range(k):
            p = 1 / (1 + math.exp(-z[i, c]))
            if c == target[i]:
                total += -((1 - p) ** gp) * math.log(p)
            else:
                pm = max(p - m, 0.0)
                total += -(pm**gn) * math.log(1 - pm)
    return total / (n * k)


# --- loss_b ---------------------------------------------------------------


def test_loss_b_hand_example():
    val = loss_b(Tensor(np.zeros((1, 3))), [0], (5, 3, 1)).item()
    assert val == pytest.approx(7 / 3 * math.log(2), abs=1e-12)
    assert val == pytest.approx(1.617, abs=1e-3)


def test_loss_b_perfect_prediction_goes_to_zero():
    z = np.array([[40.0, -40.0, -40.0]])
    assert loss_b(Tensor(z), [0], (5, 3, 1)).item() < 1e-15


def test_loss_b_unit_weights_equal_plain_bce():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((6, 3))
    t = rng.integers(0, 3, 6)
    assert loss_b(Tensor(z), t, (1, 1, 1)).item() == pytest.approx(loss_b(Tensor(z), t).item(), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 6), k=st.sampled_from([2, 3]), seed=st.integers(0, 2**31))
def test_loss_b_matches_oracle(n, k, seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-4, 4, (n, k))
    t = rng.integers(0, k, n)
    w = rng.uniform(0.5, 5, k)
    assert loss_b(Tensor(z), t, w).item() == pytest.approx(bce_oracle(z, t, w), rel=1e-12)


def test_loss_b_rejects_bad_target():
    with pytest.raises(ValueError, match="out of range"):
        loss_b(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ValueError, match="out of range"):
        loss_b(Tensor(np.zeros((1, 2))), [-1])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), bump=st.floats(0.1, 5))
def test_loss_b_monotone_in_target_weight(seed, bump):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-3, 3, (4, 3))
    t = rng.integers(0, 3, 4)
    w = np.array([5.0, 3.0, 1.0])
    cls = int(t[0])
    w2 = w.copy()
    w2[cls] += bump
    assert loss_b(Tensor(z), t, w2).item() > loss_b(Tensor(z), t, w).item()


# --- loss_a ---------------------------------------------------------------


def test_loss_a_reduces_to_bce():
    rng = np.random.default_rng(1)
    for _ in range(20):
        z = rng.uniform(-5, 5, (5, 3))
        t = rng.integers(0, 3, 5)
        a = loss_a(Tensor(z), t, AslParams(0, 0, 0)).item()
        b = loss_b(Tensor(z), t, (1, 1, 1)).item()
        assert abs(a - b) < 1e-12


def test_loss_a_margin_clamps_negative_term():
    m = 0.05
    z_neg = math.log(m / (1 - m))  # sigmoid(z) == m exactly
    z = np.array([[40.0, z_neg]])
    val = loss_a(Tensor(z), [0], AslParams(0, 4, m)).item()
    assert val < 1e-15


def test_loss_a_hand_example():
    p = 0.9
    z = np.array([[40.0, math.log(p / (1 - p))]])
    term = 2 * loss_a(Tensor(z), [0], AslParams(0, 4, 0.05)).item()
    assert term == pytest.approx(0.85**4 * -math.log(0.15), rel=1e-9)
    assert term == pytest.approx(0.990, abs=1e-3)


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    gp=st.sampled_from([0.0, 1.0, 2.0]),
    gn=st.sampled_from([0.0, 1.0, 4.0]),
    m=st.sampled_from([0.0, 0.05, 0.2]),
)
def test_loss_a_matches_oracle(seed, gp, gn, m):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-4, 4, (3, 3))
    t = rng.integers(0, 3, 3)
    assert loss_a(Tensor(z), t, AslParams(gp, gn, m)).item() == pytest.approx(asl_oracle(z, t, gp, gn, m), rel=1e-9, abs=1e-14)


@pytest.mark.parametrize("bad", [dict(gamma_pos=-1), dict(gamma_neg=-0.5), dict(margin=1.0), dict(margin=-0.1)])
def test_asl_params_validation(bad):
    with pytest.raises(ValueError):
        AslParams(**bad)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(murmur=(5, 0, 1))
    with pytest.raises(ValueError):
        LossWeights(lambda_seg=-1)


# --- segmentation ---------------------------------------------------------


def test_frame_targets_majority_and_ties():
    states = np.array([[1, 1, 2, 3, 3, 3, 0, 0, 4, 4, 2, 2, 0, 0, 0, 0]])
    np.testing.assert_array_equal(frame_targets(states, 4), [[1, 3, 4, 0]])
    # 2-2 tie resolved to the state seen first in the frame
    np.testing.assert_array_equal(frame_targets(np.array([[2, 2, 1, 1], [1, 2, 2, 1]]), 4), [[2], [1]])


def test_frame_targets_drops_partial_frame():
    assert frame_targets(np.ones((2, 17), dtype=int), 8).shape == (2, 2)


def test_loss_seg_fully_masked_is_zero():
    z = Tensor(np.random.default_rng(2).standard_normal((2, 5, 6)), requires_grad=True)
    out = loss_seg(z, np.zeros((2, 6), dtype=int))
    assert out.item() == 0.0


def test_loss_seg_uniform_logits():
    targets = np.array([[1, 2, 3, 4, 0, 1]])
    assert loss_seg(Tensor(np.zeros((1, 5, 6))), targets).item() == pytest.approx(math.log(4), abs=1e-12)


def test_loss_seg_ignores_class_zero_logit_and_saturates():
    targets = np.array([[1, 2, 3, 4]])
    z = np.full((1, 5, 4), -30.0)
    z[0, 0] = 100.0  # the never-trained unannotated channel has no influence
    for t in range(4):
        z[0, targets[0, t], t] = 30.0
    assert loss_seg(Tensor(z), targets).item() < 1e-20


def test_loss_seg_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        loss_seg(Tensor(np.zeros((1, 5, 4))), np.zeros((1, 5), dtype=int))


# --- mtl aggregate --------------------------------------------------------


def _random_output(rng, n=3, frames=6, seg=True):
    return ModelOutput(
        Tensor(rng.standard_normal((n, 3))),
        Tensor(rng.standard_normal((n, 2))),
        Tensor(rng.standard_normal((n, 5, frames))) if seg else None,
    )


def _random_targets(rng, n=3, frames=6):
    return MtlTargets(rng.integers(0, 3, n), rng.integers(0, 2, n), rng.integers(0, 5, (n, frames)))


def test_mtl_loss_linear_combination():
    rng = np.random.default_rng(3)
    out, tg = _random_output(rng), _random_targets(rng)
    w = LossWeights(lambda_murmur=0.5, lambda_outcome=2.0, lambda_seg=3.0)
    total, parts = mtl_loss(out, tg, w)
    expected = 0.5 * parts["murmur"] + 2.0 * parts["outcome"] + 3.0 * parts["seg"]
    assert total.item() == pytest.approx(expected, rel=1e-12)
    assert parts["murmur"] == pytest.approx(loss_b(out.murmur_logits, tg.murmur, w.murmur).item())
    assert parts["seg"] == pytest.approx(loss_seg(out.seg_logits, tg.seg_frames).item())


def test_mtl_loss_components_sum():
    # components (0.5, 0.25, 0.75) with unit mixing give 1.5
    rng = np.random.default_rng(4)
    out, tg = _random_output(rng), _random_targets(rng)
    total, parts = mtl_loss(out, tg)
    assert total.item() == pytest.approx(parts["murmur"] + parts["outcome"] + parts["seg"], rel=1e-12)


def test_mtl_loss_zero_seg_weight_equals_mtl2():
    rng = np.random.default_rng(5)
    out, tg = _random_output(rng), _random_targets(rng)
    mtl2 = ModelOutput(out.murmur_logits, out.outcome_logits, None)
    a, _ = mtl_loss(out, tg, LossWeights(lambda_seg=0.0))
    b, _ = mtl_loss(mtl2, tg, LossWeights())
    assert a.item() == b.item()


def test_mtl_loss_perfect_heads_is_zero():
    n = 2
    m = np.full((n, 3), -40.0)
    o = np.full((n, 2), -40.0)
    seg = np.full((n, 5, 4), -40.0)
    tg = MtlTargets(np.array([0, 2]), np.array([1, 0]), np.array([[1, 2, 3, 4], [4, 3, 0, 1]]))
    m[np.arange(n), tg.murmur] = 40.0
    o[np.arange(n), tg.outcome] = 40.0
    for i in range(n):
        for t in range(4):
            seg[i, tg.seg_frames[i, t], t] = 40.0
    for which in "AB":
        total, _ = mtl_loss(ModelOutput(Tensor(m), Tensor(o), Tensor(seg)), tg, which=which)
        assert total.item() < 1e-12


def test_mtl_loss_unknown_kind():
    rng = np.random.default_rng(6)
    with pytest.raises(ValueError, match="unknown loss"):
        mtl_loss(_random_output(rng), _random_targets(rng), which="C")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), which=st.sampled_from("AB"))
def test_losses_non_negative(seed, which):
    rng = np.random.default_rng(seed)
    out = ModelOutput(
        Tensor(rng.uniform(-20, 20, (3, 3))), Tensor(rng.uniform(-20, 20, (3, 2))),
        Tensor(rng.uniform(-20, 20, (3, 5, 4))),
    )
    total, parts = mtl_loss(out, _random_targets(rng, frames=4), which=which)
    assert total.item() >= 0 and all(v >= 0 for v in parts.values())


# --- gradients ------------------------------------------------------------


@pytest.mark.parametrize("which", ["A", "B"])
@pytest.mark.parametrize("heads", ["MTL2", "MTL3"])
def test_composed_loss_gradients_wrt_logits(which, heads):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        tg = _random_targets(rng, n=3, frames=5)
        arrays = [rng.uniform(-2, 2, (3, 3)), rng.uniform(-2, 2, (3, 2))]
        if heads == "MTL3":
            arrays.append(rng.uniform(-2, 2, (3, 5, 5)))

        def build_loss(ts):
            out = ModelOutput(ts[0], ts[1], ts[2] if len(ts) > 2 else None)
            return mtl_loss(out, tg, which=which)[0]

        worst = max(worst, check(build_loss, arrays))
    assert worst < TOL


TINY = BackboneConfig(widths=(2, 3), blocks_per_stage=1, stem_kernel=3, block_kernel=3, kernel_scale=1,
                      se_reduction=2, head_hidden=3)


@pytest.mark.parametrize("which", ["A", "B"])
@pytest.mark.parametrize("heads", ["MTL2", "MTL3"])
def test_composed_loss_gradients_through_model(which, heads):
    """End-to-end check: model parameters through the whole forward pass and the MTL loss."""
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        model = build(TINY, heads, seed=seed)
        x = rng.standard_normal((3, 1, 16))
        tg = _random_targets(rng, n=3, frames=16 // TINY.total_stride)
        params = model.parameters()
        # zero-initialised biases put some ReLU inputs exactly on the kink
        for p in params:
            p.data += rng.uniform(-0.1, 0.1, p.shape)

        def loss_for():
            return mtl_loss(model(x), tg, which=which)[0]

        model.zero_grad()
        backward(loss_for())
        analytic = [p.grad.copy() for p in params]
        # probe a random subset of coordinates of every parameter tensor
        for p, g in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = rng.choice(flat.size, size=min(3, flat.size), replace=False)
            num = np.zeros(idx.size)
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + 1e-5
                hi = loss_for().item()
                flat[i] = orig - 1e-5
                lo = loss_for().item()
                flat[i] = orig
                num[j] = (hi - lo) / 2e-5
            a = g.reshape(-1)[idx]
            scale = max(np.max(np.abs(num)), np.max(np.abs(a)), 1e-6)
            worst = max(worst, float(np.max(np.abs(a - num)) / scale))
    assert worst < TOL
