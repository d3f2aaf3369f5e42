"""MAPE, error-bound accuracy and tie-aware Kendall tau."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import ContractError


def _rel_errors(preds, targets) -> np.ndarray:
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ContractError(f"length mismatch: {p.size} predictions, {t.size} targets")
    if p.size == 0:
        raise ContractError("no samples")
    if np.any(t <= 0):
        raise ContractError("targets must be positive")
    return np.abs(p - t) / t


def mape(preds, targets) -> float:
    """100 * mean(|p - t| / t)."""
    return float(100.0 * np.mean(_rel_errors(preds, targets)))


def acc_at(preds, targets, delta: float = 0.10) -> float:
    """Percentage of predictions with relative error strictly below ``delta``."""
    return float(100.0 * np.mean(_rel_errors(preds, targets) < delta))


def kendall_tau(preds, targets) -> float:
    """Tau-b over all O(n^2) pairs."""
    x = np.asarray(preds, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ContractError(f"length mismatch: {x.size} vs {y.size}")
    n = x.size
    if n < 2:
        raise ContractError("kendall tau needs at least two samples")
    iu = np.triu_indices(n, 1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    s = float(np.sum(sx * sy))
    n0 = n * (n - 1) / 2
    n1 = float(np.sum(sx == 0))
    n2 = float(np.sum(sy == 0))
    denom = (n0 - n1) * (n0 - n2)
    if denom <= 0:
        raise ContractError("kendall tau undefined: one side is entirely tied")
    return s / math.sqrt(denom)


@dataclass
class MetricsReport:
    mape_pct: float
    acc_at_10_pct: float
    kendall_tau: float | None
    count: int
    per_family: dict[str, "MetricsReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_family"] = {k: v.to_dict() for k, v in self.per_family.items()}
        return d

    def format(self) -> str:
        tau = "n/a" if self.kendall_tau is None else f"{self.kendall_tau:.4f}"
        lines = [
            f"samples   {self.count}",
            f"MAPE      {self.mape_pct:.3f}",
            f"Acc(10%)  {self.acc_at_10_pct:.2f}",
            f"tau       {tau}",
        ]
        if self.per_family:
            lines.append(f"{'family':<20}{'n':>6}{'MAPE':>10}{'Acc10':>8}{'tau':>9}")
            for name, r in sorted(self.per_family.items()):
                t = "n/a" if r.kendall_tau is None else f"{r.kendall_tau:.3f}"
                lines.append(
                    f"{name:<20}{r.count:>6}{r.mape_pct:>10.3f}{r.acc_at_10_pct:>8.2f}{t:>9}"
                )
        return "\n".join(lines)


def _tau_or_none(p, t) -> float | None:
    try:
        return kendall_tau(p, t)
    except ContractError:
        return None


def report(preds, targets, families=None) -> MetricsReport:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    out = MetricsReport(mape(preds, targets), acc_at(preds, targets), _tau_or_none(preds, targets), preds.size)
    if families is not None:
        fam = np.asarray(families)
        for name in sorted(set(fam.tolist())):
            sel = fam == name
            out.per_family[name] = MetricsReport(
                mape(preds[sel], targets[sel]),
                acc_at(preds[sel], targets[sel]),
                _tau_or_none(preds[sel], targets[sel]),
                int(sel.sum()),
            )
    return out
