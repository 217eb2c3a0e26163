"""Error metrics in the layout of the comparison table."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    mae: float  # maximum absolute error
    mean_abs_error: float
    rmse: float
    rel_l2: float  # percent
    r2: float

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(pred, ref) -> Metrics:
    pred = np.asarray(pred, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if pred.shape != ref.shape:
        raise ValueError("pred and ref differ in size")
    err = pred - ref
    ref_norm = np.linalg.norm(ref)
    if ref_norm == 0:
        raise ValueError("relative L2 error undefined for a zero reference")
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    ss_res = float(np.sum(err ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else -np.inf)
    return Metrics(
        mae=float(np.max(np.abs(err))),
        mean_abs_error=float(np.mean(np.abs(err))),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        rel_l2=float(np.linalg.norm(err) / ref_norm * 100.0),
        r2=float(r2),
    )
