"""Marking strategies and the abstract marking-condition check.

All strategies break ties by element id and compare with a tiny relative
slack, so the selected set does not change when the indicators are scaled.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PreconditionError

STRATEGIES = ("maximum", "equidistribution", "doerfler_sorted", "doerfler_min")

# relative slack in threshold comparisons (scale invariant)
_REL = 1e-12


@dataclass(frozen=True, eq=False)
class IndicatorField:
    """Nonnegative per-element indicators eta(T) bound to a mesh uid."""

    mesh_uid: int
    values: np.ndarray
    total: float = field(init=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).ravel()
        if v.size and (not np.all(np.isfinite(v)) or v.min() < 0.0):
            raise PreconditionError("indicators must be finite and nonnegative")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "total", float(np.sqrt(np.sum(v**2))))

    @classmethod
    def from_squares(cls, mesh_uid, squares):
        return cls(mesh_uid, np.sqrt(np.maximum(np.asarray(squares, dtype=float), 0.0)))

    def __len__(self):
        return self.values.size

    def subset_total(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        return float(np.sqrt(np.sum(self.values[ids] ** 2))) if ids.size else 0.0

    def scaled(self, c):
        return IndicatorField(self.mesh_uid, self.values * c)


@dataclass(frozen=True)
class MarkingConfig:
    strategy: str = "doerfler_sorted"
    theta: float = 0.5

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown marking strategy {self.strategy!r}; "
                              f"choose from {', '.join(STRATEGIES)}")
        t = float(self.theta)
        if not 0.0 <= t <= 1.0:
            raise ConfigError(f"theta must lie in [0, 1], got {t}")
        if self.strategy.startswith("doerfler") and t == 0.0:
            raise ConfigError("Dörfler marking needs theta > 0")


def _values(ind):
    return ind.values if isinstance(ind, IndicatorField) else np.asarray(ind, dtype=float)


def _check_theta(theta, positive=False):
    if not (0.0 < theta <= 1.0 if positive else 0.0 <= theta <= 1.0):
        raise PreconditionError(f"theta out of range: {theta}")


def mark_maximum(ind, theta):
    """{T : eta(T) >= (1 - theta) max eta}."""
    _check_theta(theta)
    v = _values(ind)
    if v.size == 0 or v.max() == 0.0:
        return np.zeros(0, dtype=np.int64)
    thr = (1.0 - theta) * v.max()
    return np.nonzero(v >= thr * (1.0 - _REL))[0]


def mark_equidistribution(ind, theta):
    """{T : eta(T) >= (1 - theta) eta / #T}."""
    _check_theta(theta)
    v = _values(ind)
    if v.size == 0 or v.max() == 0.0:
        return np.zeros(0, dtype=np.int64)
    eta = np.sqrt(np.sum(v**2))
    thr = (1.0 - theta) * eta / v.size
    return np.nonzero(v >= thr * (1.0 - _REL))[0]


def _descending_order(v):
    # stable sort of -v keeps element id order among ties
    return np.argsort(-v, kind="stable")


def mark_doerfler(ind, theta, variant="doerfler_sorted"):
    """Smallest prefix of the descending ordering with theta*eta^2 <= eta(M)^2.

    ``doerfler_min`` returns a minimal-cardinality set.  It is found with a
    partial selection instead of a full sort; minimal cardinality forces the
    same elements as the sorted prefix (up to ties, which are resolved by id).
    """
    _check_theta(theta, positive=True)
    if variant not in ("doerfler_sorted", "doerfler_min"):
        raise PreconditionError(f"unknown Dörfler variant {variant!r}")
    v = _values(ind)
    sq = v**2
    total = sq.sum()
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    if theta >= 1.0:
        return np.nonzero(v > 0.0)[0]
    need = theta * total * (1.0 - _REL)
    if variant == "doerfler_sorted":
        order = _descending_order(v)
        csum = np.cumsum(sq[order])
        k = int(np.searchsorted(csum, need)) + 1
        return np.sort(order[:min(k, v.size)])
    return _doerfler_min(v, sq, need)


def _doerfler_min(v, sq, need):
    """Minimal cardinality by bisection on the count with partition."""
    n = v.size
    neg = -v
    lo, hi = 1, n
    # smallest k with sum of the k largest squares >= need
    while lo < hi:
        k = (lo + hi) // 2
        top = np.partition(neg, k - 1)[:k]
        if np.sum(top**2) >= need:
            hi = k
        else:
            lo = k + 1
    k = lo
    kth = -np.partition(neg, k - 1)[k - 1]
    above = np.nonzero(v > kth)[0]
    ties = np.nonzero(v == kth)[0][: k - above.size]
    return np.sort(np.concatenate([above, ties]))


def mark(ind, config):
    s, t = config.strategy, config.theta
    if s == "maximum":
        return mark_maximum(ind, t)
    if s == "equidistribution":
        return mark_equidistribution(ind, t)
    return mark_doerfler(ind, t, s)


def marking_function(config):
    """The M-function bounding unmarked indicators by eta(M)."""
    if config.strategy == "doerfler_min":
        c = np.sqrt((1.0 - config.theta) / config.theta)
        # c overflows for denormal theta; M(0) = 0 regardless
        return lambda t: c * t if t > 0 else 0.0
    return lambda t: t


def verify_marking_condition(ind, marked, config):
    """Return (holds, lhs, rhs) with lhs = max unmarked eta, rhs = M(eta(M))."""
    v = _values(ind)
    marked = np.unique(np.asarray(marked, dtype=np.int64))
    if marked.size and (marked[0] < 0 or marked[-1] >= v.size):
        raise PreconditionError("marked ids outside the mesh")
    mask = np.ones(v.size, dtype=bool)
    mask[marked] = False
    lhs = float(v[mask].max()) if mask.any() else 0.0
    rhs = float(marking_function(config)(np.sqrt(np.sum(v[marked] ** 2))))
    tol = 1e-13 * max(1.0, float(v.max()) if v.size else 0.0)
    return lhs <= rhs + tol, lhs, rhs
