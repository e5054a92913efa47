import numpy as np
import pytest

from pcg_mtl import trainer
from pcg_mtl.dataset import Murmur, Outcome
from pcg_mtl.model import BackboneConfig
from pcg_mtl.trainer import (
    EpochLog,
    PreparedRecording,
    TrainConfig,
    load_model,
    patient_predictions,
    predict,
    read_log_csv,
    train,
    write_log_csv,
)

TINY = BackboneConfig(widths=(4, 8), blocks_per_stage=1)


def tiny_cfg(**kw):
    base = dict(backbone=TINY, batch_size=8, max_epochs=2, freeze_epoch=2, window_s=2.0, max_lr=3e-3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def parts(synth8):
    return synth8[:6], synth8[6:]


def backbone_state(model):
    return {k: v.copy() for k, v in model.backbone.state_dict().items()}


def test_one_epoch_smoke(parts, tmp_path):
    tr, va = parts
    res = train(tiny_cfg(max_epochs=1, freeze_epoch=1), tr, va, out_dir=tmp_path)
    assert len(res.logs) == 1 and res.best_epoch == 1
    log = res.logs[0]
    assert np.isfinite(log.loss_total) and 0 <= log.val_murmur_wacc <= 1
    assert log.loss_total == pytest.approx(log.loss_murmur + log.loss_outcome + log.loss_seg)
    for name in ("best.ckpt", "last.ckpt", "epochs.csv", "config.json", "model.json"):
        assert (tmp_path / name).is_file()


def test_training_is_deterministic(parts, tmp_path):
    tr, va = parts
    a = train(tiny_cfg(), tr, va, out_dir=tmp_path / "a")
    b = train(tiny_cfg(), tr, va, out_dir=tmp_path / "b")
    assert (tmp_path / "a/epochs.csv").read_bytes() == (tmp_path / "b/epochs.csv").read_bytes()
    assert (tmp_path / "a/best.ckpt").read_bytes() == (tmp_path / "b/best.ckpt").read_bytes()
    sa, sb = a.model.state_dict(), b.model.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_freeze_from_start_leaves_backbone_untouched(parts):
    tr, va = parts
    from pcg_mtl.model import build

    ref = backbone_state(build(TINY, "MTL3", seed=0))
    res = train(tiny_cfg(freeze_epoch=0), tr, va)
    after = backbone_state(res.model)
    assert all(np.array_equal(ref[k], after[k]) for k in ref)


def test_backbone_changes_before_freeze(parts):
    tr, va = parts
    from pcg_mtl.model import build

    ref = backbone_state(build(TINY, "MTL3", seed=0))
    after = backbone_state(train(tiny_cfg(max_epochs=1, freeze_epoch=1), tr, va).model)
    assert any(not np.array_equal(ref[k], after[k]) for k in ref)


def test_validation_is_never_augmented(parts, monkeypatch):
    tr, va = parts
    calls = []
    real = trainer.augment

    def counting(w, cfg, rng):
        calls.append(len(w))
        return real(w, cfg, rng)

    monkeypatch.setattr(trainer, "augment", counting)
    train(tiny_cfg(), tr, va)
    n_train_recs = sum(len(p.recordings) for p in tr)
    assert len(calls) == 2 * n_train_recs  # one crop per training recording per epoch, nothing else


def test_loss_decreases(parts):
    tr, va = parts
    res = train(tiny_cfg(max_epochs=6, freeze_epoch=6, max_lr=1e-2), tr, va)
    totals = [e.loss_total for e in res.logs]
    assert min(totals[-2:]) < totals[0]


def test_nan_loss_aborts_with_location(parts, monkeypatch):
    tr, va = parts
    real = trainer.make_batch

    def poisoned(recs, cfg, rng):
        x, t = real(recs, cfg, rng)
        return np.full_like(x, np.nan), t

    monkeypatch.setattr(trainer, "make_batch", poisoned)
    with pytest.raises(FloatingPointError, match="epoch 1, step 1"):
        train(tiny_cfg(), tr, va)


def test_empty_training_set(parts):
    with pytest.raises(ValueError, match="empty"):
        train(tiny_cfg(), [], parts[1])


def test_overlapping_split_rejected(parts):
    tr, _ = parts
    with pytest.raises(ValueError, match="both"):
        train(tiny_cfg(), tr, tr[:1])


def test_empty_validation_logs_nan(parts):
    res = train(tiny_cfg(max_epochs=1, freeze_epoch=1), parts[0], [])
    assert np.isnan(res.logs[0].val_murmur_wacc)


def test_resume_reproduces_uninterrupted_run(parts, tmp_path, monkeypatch):
    tr, va = parts
    cfg = tiny_cfg(max_epochs=3, freeze_epoch=2)
    train(cfg, tr, va, out_dir=tmp_path / "full")

    real = trainer.evaluate
    count = {"n": 0}

    def crash_on_third(*args, **kw):
        count["n"] += 1
        if count["n"] == 3:
            raise KeyboardInterrupt
        return real(*args, **kw)

    monkeypatch.setattr(trainer, "evaluate", crash_on_third)
    with pytest.raises(KeyboardInterrupt):
        train(cfg, tr, va, out_dir=tmp_path / "cut")
    monkeypatch.setattr(trainer, "evaluate", real)
    assert len(read_log_csv(tmp_path / "cut/epochs.csv")) == 2
    train(cfg, tr, va, out_dir=tmp_path / "cut", resume=True)
    for name in ("epochs.csv", "last.ckpt", "best.ckpt"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "cut" / name).read_bytes()


def test_resume_requires_checkpoint(parts, tmp_path):
    with pytest.raises(FileNotFoundError):
        train(tiny_cfg(), *parts, out_dir=tmp_path, resume=True)


def test_resume_rejects_changed_config(parts, tmp_path):
    train(tiny_cfg(max_epochs=1, freeze_epoch=1), *parts, out_dir=tmp_path)
    with pytest.raises(ValueError, match="differs"):
        train(tiny_cfg(max_epochs=1, freeze_epoch=1, seed=5), *parts, out_dir=tmp_path, resume=True)


def test_predict_from_checkpoint(parts, tmp_path):
    tr, va = parts
    res = train(tiny_cfg(max_epochs=1, freeze_epoch=1), tr, va, out_dir=tmp_path)
    preds, rec_probs = predict(tmp_path / "best.ckpt", va)
    assert [p.id for p in preds] == [p.id for p in va]
    assert len(rec_probs) == sum(len(p.recordings) for p in va)
    for p in preds:
        assert len(p.murmur_probs) == 3 and len(p.outcome_probs) == 2
        assert all(0 < q < 1 for q in p.murmur_probs + p.outcome_probs)
    model, cfg, meta = load_model(tmp_path / "best.ckpt")
    assert cfg == tiny_cfg(max_epochs=1, freeze_epoch=1) and meta["epoch"] == 1
    # the returned model carries the checkpointed weights
    sa, sb = model.state_dict(), res.model.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def _rec(pid):
    return PreparedRecording(pid, np.zeros(1), np.zeros(1, dtype=int), 0, 0)


def test_patient_predictions_aggregate_recordings():
    recs = [_rec("a"), _rec("a"), _rec("b"), _rec("b")]
    # murmur classes (Present, Unknown, Absent); outcome (Abnormal, Normal)
    m = np.array([[0, 0, 5], [5, 0, 0], [0, 5, 0], [0, 0, 5]], dtype=float)
    o = np.array([[0, 5], [5, 0], [0, 5], [0, 5]], dtype=float)
    preds = patient_predictions(recs, m, o)
    assert preds["a"].murmur == Murmur.PRESENT and preds["a"].outcome == Outcome.ABNORMAL
    assert preds["b"].murmur == Murmur.UNKNOWN and preds["b"].outcome == Outcome.NORMAL
    sig = 1 / (1 + np.exp(-m[:2]))
    assert preds["a"].murmur_probs == pytest.approx(tuple(sig.mean(axis=0)))


def test_config_dict_roundtrip_and_unknown_keys():
    cfg = tiny_cfg(heads="MTL2", loss="A")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown run config keys"):
        TrainConfig.from_dict({"epochs": 3})
    with pytest.raises(ValueError, match="backbone"):
        TrainConfig.from_dict({"backbone": {"depth": 3}})


@pytest.mark.parametrize(
    "kw, pattern",
    [({"heads": "MTL4"}, "heads"), ({"loss": "C"}, "loss"), ({"batch_size": 0}, "batch_size"),
     ({"max_epochs": 0}, "max_epochs"), ({"freeze_epoch": 9}, "freeze_epoch"), ({"window_s": 2.001}, "divisible")],
)
def test_config_validation(kw, pattern):
    with pytest.raises(ValueError, match=pattern):
        tiny_cfg(**kw).validate()


def test_epoch_log_csv_roundtrip_is_exact(tmp_path):
    logs = [EpochLog(1, 0.1 + 0.2, 1 / 3, 2e-17, 0.0, 0.5, 12345.678, float("nan"), 1e-3)]
    write_log_csv(tmp_path / "e.csv", logs)
    back = read_log_csv(tmp_path / "e.csv")[0]
    assert back.loss_total == 0.1 + 0.2 and back.loss_murmur == 1 / 3 and np.isnan(back.val_outcome_wacc)
