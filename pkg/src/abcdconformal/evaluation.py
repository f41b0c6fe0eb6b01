"""Accuracy and coverage metrics over a test set.

NMAE normalizes the summed absolute error by the summed absolute truth
(the absolute value in the denominator keeps the metric finite for
sign-symmetric parameters).  The error spread is the root mean squared
error of the signed residuals.  Coverage counts closed-set membership;
interval lengths are averaged per component; the regional breakdown
partitions the test set by predicates on one component.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conformal import ConfidenceSet

__all__ = [
    "EvalReport",
    "RegionalRow",
    "nmae",
    "sd_abs_err",
    "empirical_coverage",
    "interval_coverage",
    "mean_interval_length",
    "regional_breakdown",
]


def nmae(truths: np.ndarray, estimates: np.ndarray, component: int) -> float:
    """sum_i |t_ij - e_ij| / sum_i |t_ij| for component j."""
    t, e = _component(truths, estimates, component)
    denom = float(np.sum(np.abs(t)))
    if denom == 0.0:
        raise ZeroDivisionError("NMAE denominator is zero for this component")
    return float(np.sum(np.abs(t - e))) / denom


def sd_abs_err(truths: np.ndarray, estimates: np.ndarray, component: int) -> float:
    """Root mean squared error of the signed residuals."""
    t, e = _component(truths, estimates, component)
    return float(np.sqrt(np.mean((t - e) ** 2)))


def _component(truths, estimates, component):
    truths = np.atleast_2d(np.asarray(truths, dtype=float))
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    if truths.shape != estimates.shape or truths.shape[0] == 0:
        raise ValueError("truths and estimates must be nonempty with equal shapes")
    return truths[:, component], estimates[:, component]


def _contains(one_set, truth) -> bool:
    if isinstance(one_set, ConfidenceSet):
        return one_set.contains(truth)
    lo, hi = one_set
    return bool(lo <= float(truth) <= hi)


def empirical_coverage(truths, sets) -> float:
    """Fraction of truths inside their (closed) sets; sets may be
    ConfidenceSet objects or (lo, hi) interval pairs."""
    truths = list(truths)
    sets = list(sets)
    if len(truths) != len(sets):
        raise ValueError("one set per truth required")
    if not truths:
        raise ValueError("empty test set")
    return sum(_contains(s, t) for t, s in zip(truths, sets)) / len(truths)


def interval_coverage(truths: np.ndarray, intervals: np.ndarray, component: int) -> float:
    """Coverage of per-record intervals (N, D, 2) for one component."""
    truths = np.asarray(truths, dtype=float)
    intervals = np.asarray(intervals, dtype=float)
    t = truths[:, component]
    lo, hi = intervals[:, component, 0], intervals[:, component, 1]
    return float(np.mean((lo <= t) & (t <= hi)))


def mean_interval_length(intervals: np.ndarray, component: int) -> float:
    intervals = np.asarray(intervals, dtype=float)
    return float(np.mean(intervals[:, component, 1] - intervals[:, component, 0]))


@dataclass(frozen=True)
class RegionalRow:
    label: str
    count: int
    hits: int
    coverage: float
    mean_length: float

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "count": self.count,
            "hits": self.hits,
            "coverage": self.coverage,
            "mean_length": self.mean_length,
        }


def regional_breakdown(truth_values, sets, predicates) -> list[RegionalRow]:
    """Per-region coverage and mean length over a partition.

    ``truth_values`` are scalars (one component of the truths), ``sets``
    the matching intervals or 1-D sets, ``predicates`` (label, fn) pairs
    that must partition the records.
    """
    truth_values = np.asarray(truth_values, dtype=float)
    sets = list(sets)
    n = truth_values.shape[0]
    assigned = np.zeros(n, dtype=int)
    rows = []
    for label, fn in predicates:
        mask = np.array([bool(fn(v)) for v in truth_values])
        assigned += mask
        if not mask.any():
            rows.append(RegionalRow(label=label, count=0, hits=0, coverage=0.0, mean_length=0.0))
            continue
        idx = np.nonzero(mask)[0]
        hits = sum(_contains(sets[i], truth_values[i]) for i in idx)
        lengths = []
        for i in idx:
            s = sets[i]
            if isinstance(s, ConfidenceSet):
                lengths.append(s.component_extent(0))
            else:
                lengths.append(s[1] - s[0])
        rows.append(
            RegionalRow(
                label=label,
                count=int(idx.size),
                hits=int(hits),
                coverage=hits / idx.size,
                mean_length=float(np.mean(lengths)),
            )
        )
    if np.any(assigned != 1):
        bad = int(np.nonzero(assigned != 1)[0][0])
        raise ValueError(
            f"predicates do not partition the test set: record {bad} matched {assigned[bad]} regions"
        )
    return rows


@dataclass
class EvalReport:
    """Everything one method produced on one test set."""

    method: str
    delta: float
    n_test: int
    nmae: list[float]
    sd_abs_err: list[float]
    interval_coverage: list[float]
    interval_mean_length: list[float]
    joint_coverage: float | None = None
    regional: list[RegionalRow] | None = None
    scale: str = "natural"
    config_hash: str = ""
    master_seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for c in self.interval_coverage:
            if not 0.0 <= c <= 1.0:
                raise ValueError("coverage outside [0, 1]")
        if self.joint_coverage is not None and not 0.0 <= self.joint_coverage <= 1.0:
            raise ValueError("coverage outside [0, 1]")
        if any(l < 0.0 for l in self.interval_mean_length):
            raise ValueError("negative mean interval length")
        if self.regional is not None and sum(r.count for r in self.regional) != self.n_test:
            raise ValueError("regional counts must sum to the test-set size")

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "delta": self.delta,
            "n_test": self.n_test,
            "nmae": self.nmae,
            "sd_abs_err": self.sd_abs_err,
            "interval_coverage": self.interval_coverage,
            "interval_mean_length": self.interval_mean_length,
            "joint_coverage": self.joint_coverage,
            "scale": self.scale,
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "extra": self.extra,
        }
        if self.regional is not None:
            d["regional"] = [r.to_dict() for r in self.regional]
        return d

    @staticmethod
    def from_dict(d: dict) -> "EvalReport":
        regional = None
        if "regional" in d:
            regional = [RegionalRow(**r) for r in d["regional"]]
        return EvalReport(
            method=d["method"],
            delta=d["delta"],
            n_test=d["n_test"],
            nmae=d["nmae"],
            sd_abs_err=d["sd_abs_err"],
            interval_coverage=d["interval_coverage"],
            interval_mean_length=d["interval_mean_length"],
            joint_coverage=d.get("joint_coverage"),
            regional=regional,
            scale=d.get("scale", "natural"),
            config_hash=d.get("config_hash", ""),
            master_seed=d.get("master_seed", 0),
            extra=d.get("extra", {}),
        )

    def metric_rows(self) -> list[tuple[str, float | None]]:
        """Flat (label, value) rows in the published table order."""
        d = len(self.nmae)
        rows: list[tuple[str, float | None]] = []
        for j in range(d):
            rows.append((f"NMAE_{j + 1}", self.nmae[j]))
        for j in range(d):
            rows.append((f"sd(theta_{j + 1} - est_{j + 1})", self.sd_abs_err[j]))
        for j in range(d):
            rows.append((f"mean length conf. intervals theta_{j + 1}", self.interval_mean_length[j]))
        for j in range(d):
            rows.append((f"coverage conf. intervals theta_{j + 1}", self.interval_coverage[j]))
        rows.append((f"coverage conf. sets theta ({d}D)", self.joint_coverage))
        return rows
