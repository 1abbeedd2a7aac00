"""Uplift evaluation: uplift curves, AUUC, and run aggregation.

The curve ranks treated and control rows separately by score (the robust
choice under imbalanced arms). For each targeting fraction phi on a
uniform grid, the top ceil(phi * N) rows of each arm are selected and

    g(phi) = phi * (response rate of selected treated
                    - response rate of selected control)

AUUC is the average of g over the grid. Under this convention a random
(constant) scorer lands near ATE / 2 and the empirical ATE acts as an
approximate upper bound; g(1) equals the empirical ATE exactly since
both rankings then include everyone.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MetricError

DEFAULT_GRID = 100


@dataclass
class UpliftCurve:
    """Ordered (phi, g) points on (0, 1] plus the AUUC scalar."""

    phi: np.ndarray
    g: np.ndarray
    auuc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.phi.tolist(), self.g.tolist()))


@dataclass
class RunAggregate:
    """AUUCs of repeated runs with mean and sample standard deviation."""

    values: list[float]
    mean: float
    std: float
    single_run: bool

    def format_x1000(self) -> str:
        """Table entry in the mean±std (x 0.001) convention."""
        return f"{self.mean * 1000:.3f}±{self.std * 1000:.3f}"


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _descending_order(scores: np.ndarray) -> np.ndarray:
    # Stable sort on the negated scores: descending, ties kept in
    # original row order.
    return np.argsort(-scores, kind="stable")


def uplift_curve(
    scores,
    outcome,
    treatment,
    n_points: int = DEFAULT_GRID,
    ranking: str = "separate",
) -> UpliftCurve:
    """Uplift curve over a uniform grid phi = k / n_points, k = 1..n_points.

    `ranking="separate"` (default) ranks each arm by score on its own;
    `ranking="joint"` ranks all rows together and compares the selected
    arms' rates, provided for comparison only.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(outcome, dtype=np.int64)
    t = np.asarray(treatment, dtype=np.int64)
    if not (scores.shape == y.shape == t.shape) or scores.ndim != 1:
        raise ConfigError("scores, outcome and treatment must be equal-length vectors")
    if n_points < 2:
        raise ConfigError(f"n_points must be at least 2, got {n_points}")
    n_t = int(t.sum())
    n_c = len(t) - n_t
    if n_t == 0 or n_c == 0:
        raise MetricError(f"uplift curve undefined: {n_t} treated, {n_c} control")

    phi = np.arange(1, n_points + 1) / n_points
    if ranking == "separate":
        g = _separate_g(scores, y, t, n_points)
    elif ranking == "joint":
        g = _joint_g(scores, y, t, n_points)
    else:
        raise ConfigError(f"unknown ranking {ranking!r}")
    auuc = math.fsum(g) / n_points
    return UpliftCurve(phi=phi, g=np.asarray(g), auuc=auuc)


def _separate_g(scores, y, t, n_points):
    treated = t == 1
    y_t = y[treated][_descending_order(scores[treated])]
    y_c = y[~treated][_descending_order(scores[~treated])]
    cum_t = np.cumsum(y_t)
    cum_c = np.cumsum(y_c)
    n_t, n_c = len(y_t), len(y_c)
    g = []
    for k in range(1, n_points + 1):
        m_t = _ceil_div(k * n_t, n_points)
        m_c = _ceil_div(k * n_c, n_points)
        rate_t = cum_t[m_t - 1] / m_t
        rate_c = cum_c[m_c - 1] / m_c
        g.append((k / n_points) * (rate_t - rate_c))
    return g


def _joint_g(scores, y, t, n_points):
    order = _descending_order(scores)
    t_sorted = t[order]
    y_sorted = y[order]
    cum_nt = np.cumsum(t_sorted)
    cum_yt = np.cumsum(y_sorted * t_sorted)
    cum_nc = np.cumsum(1 - t_sorted)
    cum_yc = np.cumsum(y_sorted * (1 - t_sorted))
    n = len(y)
    g = []
    for k in range(1, n_points + 1):
        m = _ceil_div(k * n, n_points)
        nt, nc = cum_nt[m - 1], cum_nc[m - 1]
        rate_t = cum_yt[m - 1] / nt if nt > 0 else 0.0
        rate_c = cum_yc[m - 1] / nc if nc > 0 else 0.0
        g.append((k / n_points) * (rate_t - rate_c))
    return g


def auuc(scores, outcome, treatment) -> float:
    """AUUC on the default grid; equals uplift_curve(...).auuc."""
    return uplift_curve(scores, outcome, treatment, n_points=DEFAULT_GRID).auuc


def aggregate_runs(auucs) -> RunAggregate:
    """Mean and sample (n-1) standard deviation of repeated-run AUUCs.

    A single run aggregates to its own value with std reported as 0 and
    the single-run flag set.
    """
    values = [float(v) for v in auucs]
    if not values:
        raise ConfigError("aggregate_runs needs at least one value")
    mean = float(np.mean(values))
    if len(values) == 1:
        return RunAggregate(values=values, mean=mean, std=0.0, single_run=True)
    return RunAggregate(
        values=values,
        mean=mean,
        std=float(np.std(values, ddof=1)),
        single_run=False,
    )


def export_curve(curve: UpliftCurve, path) -> None:
    """Write the curve as 'phi,g' rows; 17 significant digits so the
    file round-trips bitwise."""
    if len(curve.phi) < 2:
        raise ConfigError("a curve needs at least 2 points")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["phi", "g"])
        for p, g in zip(curve.phi, curve.g):
            writer.writerow([f"{p:.17g}", f"{g:.17g}"])


def load_curve(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back a curve file written by export_curve."""
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["phi", "g"]:
            raise ConfigError(f"{path}: not a curve file (header {header!r})")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    phi = np.array([r[0] for r in rows])
    g = np.array([r[1] for r in rows])
    return phi, g
