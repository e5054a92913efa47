"""Scoring constants of the PhysioNet/CinC Challenge 2022.

Provenance: transcribed from the official Challenge evaluation script
(``evaluate_model.py`` of the python-classifier-2022 example repository,
functions ``compute_weighted_accuracy`` and ``compute_cost``). The script
was not reachable from the build environment, so the values were written
down from its published definition and should be checked against it before
comparing scores with officially reported ones. They are kept
here, separate from the scoring formulas, so that the formulas can be run and
tested with any other constants.
"""

# class order: Present, Unknown, Absent
MURMUR_WEIGHTS = (5.0, 3.0, 1.0)
# class order: Abnormal, Normal
OUTCOME_WEIGHTS = (5.0, 1.0)

# outcome cost model
ALGORITHM_COST = 10.0  # per patient screened by the algorithm
TREATMENT_COST = 10000.0  # per true-positive referral
ERROR_COST = 50000.0  # per missed abnormal patient
# expert screening cost: n * poly(s / n), with s referred patients out of n
EXPERT_COST_COEFFS = (25.0, 397.0, -1718.0, 0.0, 11296.0)  # powers 0..4 of s / n
