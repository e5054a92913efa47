"""Per-patient aggregation of recording predictions and the Challenge metrics:
weighted accuracy and outcome cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import challenge_constants as C
from .dataset import MURMUR_CLASSES, OUTCOME_CLASSES, Murmur, Outcome


def aggregate_murmur(labels: Sequence) -> Murmur:
    """Any Present -> Present; all Absent -> Absent; otherwise Unknown."""
    labels = [Murmur(x) for x in labels]
    if not labels:
        raise ValueError("cannot aggregate an empty list of recording predictions")
    if Murmur.PRESENT in labels:
        return Murmur.PRESENT
    if all(x == Murmur.ABSENT for x in labels):
        return Murmur.ABSENT
    return Murmur.UNKNOWN


def aggregate_outcome(labels: Sequence) -> Outcome:
    labels = [Outcome(x) for x in labels]
    if not labels:
        raise ValueError("cannot aggregate an empty list of recording predictions")
    return Outcome.ABNORMAL if Outcome.ABNORMAL in labels else Outcome.NORMAL


def confusion_matrix(truth: Sequence[int], pred: Sequence[int], k: int) -> np.ndarray:
    """Counts with rows = truth, columns = prediction."""
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth, dtype=int), np.asarray(pred, dtype=int)), 1)
    return cm


def weighted_accuracy(cm, class_weights: Sequence[float]) -> float:
    cm = np.asarray(cm)
    w = np.asarray(class_weights, dtype=np.float64)
    denom = float(np.dot(w, cm.sum(axis=1)))
    if denom == 0:
        raise ValueError("weighted accuracy is undefined for an empty confusion matrix")
    return float(np.dot(w, np.diag(cm))) / denom


@dataclass(frozen=True)
class CostModel:
    algorithm_cost: float = C.ALGORITHM_COST
    treatment_cost: float = C.TREATMENT_COST
    error_cost: float = C.ERROR_COST
    expert_coeffs: Tuple[float, ...] = C.EXPERT_COST_COEFFS

    def expert(self, screened: float, total: float) -> float:
        frac = screened / total
        return total * sum(c * frac**i for i, c in enumerate(self.expert_coeffs))


def outcome_cost(cm, model: CostModel = CostModel(), per_patient: bool = True) -> float:
    """Screening cost of the outcome decisions in a 2x2 matrix ordered (Abnormal, Normal).

    Everyone predicted Abnormal is referred to an expert; referred true
    positives are treated, missed abnormal patients incur the error cost.
    """
    cm = np.asarray(cm)
    if cm.shape != (2, 2):
        raise ValueError(f"outcome cost needs a 2x2 matrix, got shape {cm.shape}")
    n = int(cm.sum())
    if n == 0:
        raise ValueError("outcome cost is undefined for zero patients")
    tp, fn = int(cm[0, 0]), int(cm[0, 1])
    fp = int(cm[1, 0])
    total = (
        model.algorithm_cost * n
        + model.expert(tp + fp, n)
        + model.treatment_cost * tp
        + model.error_cost * fn
    )
    return total / n if per_patient else total


@dataclass
class ScoreReport:
    murmur_weighted_accuracy: float
    outcome_cost: float
    outcome_cost_total: float
    outcome_weighted_accuracy: float
    murmur_confusion: np.ndarray
    outcome_confusion: np.ndarray
    n_patients: int

    def to_dict(self) -> dict:
        return {
            "n_patients": self.n_patients,
            "murmur_weighted_accuracy": self.murmur_weighted_accuracy,
            "outcome_weighted_accuracy": self.outcome_weighted_accuracy,
            "outcome_cost_per_patient": self.outcome_cost,
            "outcome_cost_total": self.outcome_cost_total,
            "murmur_confusion": {
                "classes": [c.value for c in MURMUR_CLASSES],
                "rows": "truth",
                "matrix": self.murmur_confusion.tolist(),
            },
            "outcome_confusion": {
                "classes": [c.value for c in OUTCOME_CLASSES],
                "rows": "truth",
                "matrix": self.outcome_confusion.tolist(),
            },
        }


def score(
    truth: Mapping[str, Tuple[Murmur, Outcome]],
    predictions: Mapping[str, Tuple[Murmur, Outcome]],
    murmur_weights: Sequence[float] = C.MURMUR_WEIGHTS,
    outcome_weights: Sequence[float] = C.OUTCOME_WEIGHTS,
    cost_model: CostModel = CostModel(),
) -> ScoreReport:
    """Patient-level metrics; ``truth`` and ``predictions`` map patient id to labels."""
    missing = sorted(set(truth) - set(predictions))
    if missing:
        raise ValueError(f"no prediction for patients {missing[:5]}")
    ids = sorted(truth)
    m_true = [Murmur(truth[i][0]).class_index for i in ids]
    m_pred = [Murmur(predictions[i][0]).class_index for i in ids]
    o_true = [Outcome(truth[i][1]).class_index for i in ids]
    o_pred = [Outcome(predictions[i][1]).class_index for i in ids]
    mcm = confusion_matrix(m_true, m_pred, len(MURMUR_CLASSES))
    ocm = confusion_matrix(o_true, o_pred, len(OUTCOME_CLASSES))
    return ScoreReport(
        murmur_weighted_accuracy=weighted_accuracy(mcm, murmur_weights),
        outcome_cost=outcome_cost(ocm, cost_model, per_patient=True),
        outcome_cost_total=outcome_cost(ocm, cost_model, per_patient=False),
        outcome_weighted_accuracy=weighted_accuracy(ocm, outcome_weights),
        murmur_confusion=mcm,
        outcome_confusion=ocm,
        n_patients=len(ids),
    )


# ---------------------------------------------------------------------------
# prediction files


@dataclass
class PatientPrediction:
    id: str
    murmur: Murmur
    outcome: Outcome
    murmur_probs: Tuple[float, ...] = ()
    outcome_probs: Tuple[float, ...] = ()

    def to_text(self) -> str:
        lines = [f"#{self.id}", f"Murmur: {self.murmur.value}", f"Outcome: {self.outcome.value}"]
        for probs in (self.murmur_probs, self.outcome_probs):
            if probs:
                lines.append("Probabilities: " + ",".join(f"{p:.6f}" for p in probs))
        return "".join(line + "\n" for line in lines)


def parse_prediction(text: str) -> PatientPrediction:
    pid = murmur = outcome = None
    probs: List[Tuple[float, ...]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            if line.startswith("#"):
                pid = line[1:].strip()
            elif line.startswith("Murmur:"):
                murmur = Murmur(line.split(":", 1)[1].strip())
            elif line.startswith("Outcome:"):
                outcome = Outcome(line.split(":", 1)[1].strip())
            elif line.startswith("Probabilities:"):
                probs.append(tuple(float(v) for v in line.split(":", 1)[1].split(",")))
            else:
                raise ValueError(f"unrecognised line {line!r}")
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if pid is None or murmur is None or outcome is None:
        raise ValueError("prediction file needs '#<ID>', 'Murmur:' and 'Outcome:' lines")
    m_probs = next((p for p in probs if len(p) == len(MURMUR_CLASSES)), ())
    o_probs = next((p for p in probs if len(p) == len(OUTCOME_CLASSES)), ())
    return PatientPrediction(pid, murmur, outcome, m_probs, o_probs)


def write_predictions(preds: Iterable[PatientPrediction], out_dir: Union[str, Path]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for p in preds:
        (out_dir / f"{p.id}.txt").write_text(p.to_text(), encoding="utf-8")


def read_predictions(pred_dir: Union[str, Path]) -> Dict[str, PatientPrediction]:
    pred_dir = Path(pred_dir)
    if not pred_dir.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {pred_dir}")
    out = {}
    for path in sorted(pred_dir.glob("*.txt")):
        try:
            p = parse_prediction(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None
        out[p.id] = p
    return out
