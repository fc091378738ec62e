"""Numerical audits of estimator stability, reduction and their consequences."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, PreconditionError
from .marking import IndicatorField

Q_RED = 2.0 ** -0.5
C_CAP = 10.0
DELTAS = (0.5, 0.25, 0.1, 0.05, 0.01)
_TINY_DIFF = 1e-14


@dataclass(frozen=True, eq=False)
class LevelRecord:
    level: int
    mesh_uid: int
    indicators: IndicatorField
    energy: float
    marked: np.ndarray
    map_to_next: object = None
    diff_to_next: Optional[float] = None
    n_elements: int = 0
    n_dofs: int = 0

    def __post_init__(self):
        if self.indicators.mesh_uid != self.mesh_uid:
            raise PreconditionError("indicators belong to a different mesh")
        if self.diff_to_next is not None and not self.diff_to_next >= 0.0:
            raise PreconditionError("diff_to_next must be nonnegative")

    @property
    def eta(self):
        return self.indicators.total


class Audit(NamedTuple):
    value: float
    c_est: float
    passed: bool


def _chain(rec_H, rec_h, rmap):
    rmap = rec_H.map_to_next if rmap is None else rmap
    if rmap is None:
        raise PreconditionError(f"level {rec_H.level} has no refinement map")
    if rmap.coarse_uid != rec_H.mesh_uid or rmap.fine_uid != rec_h.mesh_uid:
        raise PreconditionError(
            f"records do not chain: map {rmap.coarse_uid}->{rmap.fine_uid}, "
            f"records {rec_H.mesh_uid}->{rec_h.mesh_uid}")
    return rmap


def _diff(rec_H, diff):
    d = rec_H.diff_to_next if diff is None else diff
    if d is None:
        raise PreconditionError(f"level {rec_H.level} has no diff_to_next")
    return float(d)


def check_stability(rec_H, rec_h, c_cap=C_CAP, rmap=None, diff=None):
    """slack = eta_h(kept) - eta_H(kept); passes if slack <= c_cap * diff + 1e-12."""
    rmap = _chain(rec_H, rec_h, rmap)
    d = _diff(rec_H, diff)
    kept = rmap.kept
    slack = rec_h.indicators.subset_total(kept[:, 1]) - rec_H.indicators.subset_total(kept[:, 0])
    c_est = max(0.0, slack) / d if d > _TINY_DIFF else math.nan
    return Audit(slack, c_est, slack <= c_cap * d + 1e-12)


def check_reduction(rec_H, rec_h, q=Q_RED, c_cap=C_CAP, rmap=None, diff=None):
    """residual = eta_h(new)^2 - q eta_H(refined)^2; passes if <= c_cap diff^2 + 1e-12."""
    if not 0.0 < q < 1.0:
        raise PreconditionError("q must lie in (0, 1)")
    rmap = _chain(rec_H, rec_h, rmap)
    d = _diff(rec_H, diff)
    residual = (rec_h.indicators.subset_total(rmap.new_fine) ** 2
                - q * rec_H.indicators.subset_total(rmap.refined_coarse) ** 2)
    c_est = max(0.0, residual) / d**2 if d > _TINY_DIFF else math.nan
    return Audit(residual, c_est, residual <= c_cap * d**2 + 1e-12)


class Apriori(NamedTuple):
    increments: np.ndarray
    partial_sums: np.ndarray
    passed: bool


def check_apriori(records):
    """Increments d_l, cumulative sum of d_l^2, and the telescoping/trend check."""
    if len(records) < 2:
        raise PreconditionError("need at least two records")
    d = []
    for r in records[:-1]:
        if r.diff_to_next is None:
            raise PreconditionError(f"level {r.level} has no diff_to_next")
        d.append(r.diff_to_next)
    d = np.array(d)
    sums = np.cumsum(d**2)
    ok = sums[-1] <= records[-1].energy - records[0].energy + 1e-8
    k = min(3, d.size // 2)
    if k:
        ok = ok and d[-k:].sum() <= d[:k].sum()
    return Apriori(d, sums, bool(ok))


class Contraction(NamedTuple):
    holds: bool
    bound: np.ndarray


def contraction_limit_check(a, rho, b):
    """Check a_{l+1} <= rho a_l + b_l and return the induction bound."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise PreconditionError("a and b must have equal lengths")
    if not 0.0 < rho < 1.0:
        raise PreconditionError("rho must lie in (0, 1)")
    if np.any(a < 0) or np.any(b < 0):
        raise PreconditionError("sequences must be nonnegative")
    n = a.size
    bound = np.empty(n)
    if n:
        bound[0] = a[0]
    for i in range(1, n):
        bound[i] = rho * bound[i - 1] + b[i - 1]
    holds = bool(np.all(a[1:] <= rho * a[:-1] + b[:-1] + 1e-13))
    if holds:
        slack = 1e-12 + 1e-13 * np.arange(n)
        if not np.all(a <= bound + slack):
            raise AssertionError("induction bound violated although the recursion holds")
    return Contraction(holds, bound)


def doerfler_rho(theta, delta, q=Q_RED):
    return (1.0 + delta) - ((1.0 + delta) - q) * theta


def default_delta(theta, q=Q_RED):
    for delta in DELTAS:
        if doerfler_rho(theta, delta, q) < 1.0:
            return delta
    raise ConfigError(f"no admissible delta for theta={theta}")


class DoerflerFit(NamedTuple):
    rho: float
    delta: float
    b: np.ndarray
    d: np.ndarray
    passed: bool


def fit_doerfler_contraction(records, theta, strategy="doerfler_sorted", delta=None,
                             q=Q_RED, c_cap=C_CAP):
    """rho from the contraction formula and b_l = max(0, eta_{l+1}^2 - rho eta_l^2)."""
    if not strategy.startswith("doerfler"):
        raise ConfigError(f"contraction fit needs a Dörfler run, got {strategy!r}")
    if not 0.0 < theta <= 1.0:
        raise ConfigError("theta must lie in (0, 1]")
    delta = default_delta(theta, q) if delta is None else float(delta)
    rho = doerfler_rho(theta, delta, q)
    if not rho < 1.0:
        raise ConfigError(f"rho = {rho} is not below one")
    eta2 = np.array([r.eta**2 for r in records])
    d = np.array([r.diff_to_next for r in records[:-1]], dtype=float)
    b = np.maximum(eta2[1:] - rho * eta2[:-1], 0.0)
    passed = bool(np.all(b <= c_cap * d**2 + 1e-10))
    return DoerflerFit(rho, delta, b, d, passed)


class Decay(NamedTuple):
    decayed: bool
    tail_ratio: float


def estimator_convergence_report(records, target=0.1):
    """tail_ratio = eta_last / max(eta_0, eta_1, eta_2)."""
    etas = [r.eta if isinstance(r, LevelRecord) else float(r) for r in records]
    if len(etas) < 6:
        raise PreconditionError("need at least six levels")
    head = max(etas[:3])
    ratio = 0.0 if head == 0.0 else etas[-1] / head
    return Decay(ratio <= target, ratio)


REPORT_COLUMNS = ("pair", "slack", "C_stab_est", "residual", "C_red_est", "d", "pass")


def audit_records(records, q=Q_RED, c_cap=C_CAP):
    """One row per consecutive pair; returns (rows, all passed)."""
    rows = []
    ok = True
    for rec_H, rec_h in zip(records[:-1], records[1:]):
        st = check_stability(rec_H, rec_h, c_cap)
        rd = check_reduction(rec_H, rec_h, q, c_cap)
        passed = st.passed and rd.passed
        ok = ok and passed
        rows.append({"pair": f"{rec_H.level}-{rec_h.level}", "slack": st.value,
                     "C_stab_est": st.c_est, "residual": rd.value, "C_red_est": rd.c_est,
                     "d": rec_H.diff_to_next, "pass": passed})
    return rows, ok


def write_axiom_report(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r["pair"]] + [_fmt(r[c]) for c in REPORT_COLUMNS[1:-1]]
                       + [int(bool(r["pass"]))])


def _fmt(x):
    if x is None:
        return ""
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)
