"""The adaptive loop SOLVE -> ESTIMATE -> MARK -> REFINE and its run logs."""
from __future__ import annotations

import csv
import dataclasses
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bem_symm, fem_obstacle, fem_poisson
from .axioms import LevelRecord
from .boundary_mesh import (make_boundary_mesh, read_polygon, refine_boundary, regular_polygon,
                            square, write_boundary_mesh)
from .errors import ConfigError, EstconvError, PreconditionError, SolverError
from .marking import IndicatorField, MarkingConfig, mark, verify_marking_condition
from .mesh2d import RefinementMap, make_initial_mesh, refine_nvb, write_mesh

PROBLEMS = ("poisson", "obstacle", "symm")
CSV_COLUMNS = ("level", "n_elements", "n_dofs", "eta", "eta_marked", "n_marked", "energy",
               "diff_next", "wall_ms")


@dataclass(frozen=True)
class RunConfig:
    """One adaptive run.  A stopping value of 0 disables that criterion."""

    problem: str = "poisson"
    domain: str = "lshape"
    f: float = 1.0
    chi: tuple = (0.0, 0.0, -1.0)
    n0: int = 1
    marking: MarkingConfig = field(default_factory=MarkingConfig)
    eta_tol: float = 0.0
    max_elements: int = 0
    max_levels: int = 0
    solver_rtol: float = 1e-10

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {', '.join(PROBLEMS)}")
        stops = [self.eta_tol > 0, self.max_elements > 0, self.max_levels > 0]
        if sum(stops) != 1:
            raise ConfigError("set exactly one of eta_tol, max_elements, max_levels to a positive value")
        if self.eta_tol < 0 or self.max_elements < 0 or self.max_levels < 0:
            raise ConfigError("stopping values must be nonnegative")
        if self.n0 < 1:
            raise ConfigError("n0 must be at least 1")
        if not self.solver_rtol > 0:
            raise ConfigError("solver_rtol must be positive")
        object.__setattr__(self, "chi", tuple(float(c) for c in self.chi))

    @property
    def load(self):
        return fem_poisson.Load(value=float(self.f))


_KEYS = {
    "problem": str, "domain": str, "f": float, "chi": str, "n0": int, "marking": str,
    "theta": float, "eta_tol": float, "max_elements": int, "max_levels": int,
    "solver_rtol": float,
}


def parse_config(text, name="<config>"):
    """Flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{name} line {no}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{name} line {no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{name} line {no}: duplicate key {key!r}")
        try:
            values[key] = _KEYS[key](val)
        except ValueError:
            raise ConfigError(f"{name} line {no}: bad value for {key}: {val!r}") from None
    marking = MarkingConfig(values.pop("marking", "doerfler_sorted"), values.pop("theta", 0.5))
    if "chi" in values:
        parts = values.pop("chi").replace(",", " ").split()
        if len(parts) != 3:
            raise ConfigError(f"{name}: chi needs three numbers 'a b c'")
        try:
            values["chi"] = tuple(float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"{name}: chi needs three numbers 'a b c'") from None
    return RunConfig(marking=marking, **values)


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def format_config(cfg):
    a, b, c = cfg.chi
    lines = [
        f"problem = {cfg.problem}", f"domain = {cfg.domain}", f"f = {cfg.f!r}",
        f"chi = {a!r} {b!r} {c!r}", f"n0 = {cfg.n0}", f"marking = {cfg.marking.strategy}",
        f"theta = {float(cfg.marking.theta)!r}", f"eta_tol = {cfg.eta_tol!r}",
        f"max_elements = {cfg.max_elements}", f"max_levels = {cfg.max_levels}",
        f"solver_rtol = {cfg.solver_rtol!r}",
    ]
    return "\n".join(lines) + "\n"


def make_boundary_domain(domain, n0=1):
    """``square:<side>``, ``regular:<n>:<radius>`` or ``polygon:<file>``."""
    kind, _, arg = domain.partition(":")
    try:
        if kind == "square":
            curve = square(float(arg))
        elif kind == "regular":
            n, r = arg.split(":")
            curve = regular_polygon(int(n), float(r))
        elif kind == "polygon":
            curve = read_polygon(arg)
        else:
            raise ConfigError(f"unknown boundary domain {domain!r}")
    except ValueError:
        raise ConfigError(f"cannot parse boundary domain {domain!r}") from None
    return make_boundary_mesh(curve, n0)


# ---------------------------------------------------------------------------
# problem adapters: each keeps the previous level's state for warm starts
# and for the energy-norm distance between consecutive solutions


class _Poisson:
    def __init__(self, cfg):
        self.cfg = cfg
        self.f = cfg.load
        self.prev = None

    def initial_mesh(self):
        return make_initial_mesh(self.cfg.domain)

    def refine(self, mesh, marked):
        return refine_nvb(mesh, marked)

    def solve(self, mesh, rmap):
        system = fem_poisson.assemble_poisson(mesh, self.f)
        x0 = None
        if self.prev is not None:
            x0 = fem_poisson.prolong(self.prev, rmap, mesh).coefficients
        u = fem_poisson.solve_spd(system, rtol=self.cfg.solver_rtol, x0=x0)
        energy = float(u.coefficients @ (system.matrix @ u.coefficients)) if u.coefficients.size else 0.0
        diff = None if self.prev is None else fem_poisson.energy_norm_diff(u, self.prev, rmap)
        self.prev = u
        return u, energy, diff, system.space.n_dofs

    def estimate(self, mesh, u):
        return fem_poisson.estimate_residual(mesh, self.f, u)


class _Obstacle(_Poisson):
    def __init__(self, cfg):
        super().__init__(cfg)
        self.prob = fem_obstacle.ObstacleProblem(self.f, cfg.chi)
        self.active = None

    def solve(self, mesh, rmap):
        u0 = None
        if self.prev is not None:
            u0 = fem_poisson.prolong(self.prev, rmap, mesh).coefficients
        sol, system = fem_obstacle.solve_obstacle(mesh, self.prob, u0=u0)
        u = sol.u
        energy = fem_obstacle.obstacle_energy_surrogate(system, u.coefficients) if u.coefficients.size else 0.0
        diff = None if self.prev is None else fem_poisson.energy_norm_diff(u, self.prev, rmap)
        self.prev = u
        self.active = sol.active
        return u, energy, diff, system.space.n_dofs

    def estimate(self, mesh, u):
        return fem_obstacle.estimate_obstacle(mesh, self.prob, u)


class _Symm:
    def __init__(self, cfg):
        self.cfg = cfg
        self.f = cfg.load
        self.prev = None
        self.V = None

    def initial_mesh(self):
        return make_boundary_domain(self.cfg.domain, self.cfg.n0)

    def refine(self, mesh, marked):
        return refine_boundary(mesh, marked)

    def solve(self, mesh, rmap):
        previous = None if self.V is None else (self.V, rmap)
        V = bem_symm.assemble_single_layer(mesh, previous)
        system = bem_symm.SingleLayerSystem(mesh, V, bem_symm.segment_moments(mesh, self.f))
        phi = bem_symm.solve_symm(system)
        energy = bem_symm.energy(V, phi)
        diff = None if self.prev is None else bem_symm.energy_norm_diff(V, phi, self.prev, rmap)
        self.prev, self.V = phi, V
        return phi, energy, diff, mesh.n_elements

    def estimate(self, mesh, phi):
        return bem_symm.estimate_weaksing(mesh, self.f, phi)


_ADAPTERS = {"poisson": _Poisson, "obstacle": _Obstacle, "symm": _Symm}


@dataclass
class RunLog:
    config: RunConfig
    records: list
    meshes: list
    wall_ms: list
    stop_reason: str
    solutions: list = field(default_factory=list)

    @property
    def n_elements(self):
        return np.array([r.n_elements for r in self.records])

    @property
    def etas(self):
        return np.array([r.eta for r in self.records])


def run_adaptive(cfg, keep_solutions=False, on_level=None):
    """Run the adaptive loop until a stopping rule fires."""
    problem = _ADAPTERS[cfg.problem](cfg)
    mesh = problem.initial_mesh()
    records, meshes, walls, sols = [], [], [], []
    rmap = None
    stop = None
    level = 0
    while stop is None:
        t0 = time.perf_counter()
        try:
            u, energy, diff, n_dofs = problem.solve(mesh, rmap)
        except SolverError as exc:
            exc.level = level
            raise SolverError(f"level {level}: {exc}", residual=exc.residual, level=level) from exc
        if records:
            records[-1] = dataclasses.replace(records[-1], map_to_next=rmap, diff_to_next=diff)
        ind = problem.estimate(mesh, u)
        marked = mark(ind, cfg.marking)
        holds, lhs, rhs = verify_marking_condition(ind, marked, cfg.marking)
        if not holds:
            raise EstconvError(f"level {level}: marking condition violated ({lhs!r} > {rhs!r})")
        rec = LevelRecord(level, mesh.uid, ind, energy, marked, n_elements=mesh.n_elements,
                          n_dofs=n_dofs)
        records.append(rec)
        meshes.append(mesh)
        if keep_solutions:
            sols.append(u)
        if cfg.eta_tol > 0 and ind.total <= cfg.eta_tol:
            stop = "eta_tol"
        elif marked.size == 0:
            stop = "converged"
        elif cfg.max_levels > 0 and level + 1 >= cfg.max_levels:
            stop = "max_levels"
        else:
            fine, step = problem.refine(mesh, marked)
            if cfg.max_elements > 0 and fine.n_elements > cfg.max_elements:
                stop = "max_elements"
            else:
                mesh, rmap = fine, step
                level += 1
        walls.append((time.perf_counter() - t0) * 1e3)
        if on_level is not None:
            on_level(rec)
    return RunLog(cfg, records, meshes, walls, stop, sols)


def estimate_rate(log, window):
    """Least-squares slope of log eta against log #elements over the last levels."""
    if isinstance(log, RunLog):
        n, eta = log.n_elements, log.etas
    else:
        n, eta = (np.asarray(x, dtype=float) for x in log)
    if window < 2:
        raise PreconditionError("window must be at least 2")
    if len(n) < window + 1:
        raise PreconditionError(f"need at least {window + 1} levels, have {len(n)}")
    x = np.log(np.asarray(n[-window:], dtype=float))
    y = np.log(np.asarray(eta[-window:], dtype=float))
    if not np.all(np.isfinite(y)):
        raise PreconditionError("estimator vanished inside the window")
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# run directories


def _num(x):
    if x is None:
        return ""
    return repr(float(x))


def run_log_csv(log, timing=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec, wall in zip(log.records, log.wall_ms):
        eta_marked = rec.indicators.subset_total(rec.marked)
        w.writerow([rec.level, rec.n_elements, rec.n_dofs, _num(rec.eta), _num(eta_marked),
                    rec.marked.size, _num(rec.energy), _num(rec.diff_to_next),
                    f"{wall:.3f}" if timing else ""])
    return buf.getvalue()


def write_run(log, out, timing=False):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(log.config))
    (out / "run_log.csv").write_text(run_log_csv(log, timing))
    (out / "stop_reason.txt").write_text(log.stop_reason + "\n")
    for rec, mesh in zip(log.records, log.meshes):
        if log.config.problem == "symm":
            write_boundary_mesh(mesh, out / f"mesh_{rec.level:03d}.txt")
        else:
            write_mesh(mesh, out / f"mesh_{rec.level:03d}.txt")
        data = {"indicators": rec.indicators.values, "marked": rec.marked,
                "energy": np.array(rec.energy), "mesh_uid": np.array(rec.mesh_uid)}
        if rec.map_to_next is not None:
            m = rec.map_to_next
            data.update(diff_next=np.array(rec.diff_to_next), fine_parent=m.fine_parent,
                        fine_kept=m.fine_kept, n_coarse=np.array(m.n_coarse),
                        n_coarse_vertices=np.array(m.n_coarse_vertices),
                        new_vertex_edges=m.new_vertex_edges, fine_uid=np.array(m.fine_uid))
        np.savez(out / f"level_{rec.level:03d}.npz", **data)


def read_records(out):
    """Rebuild LevelRecords from a run directory."""
    out = Path(out)
    files = sorted(out.glob("level_*.npz"))
    if not files:
        raise ConfigError(f"no level files in {out}")
    records = []
    for i, path in enumerate(files):
        with np.load(path) as z:
            uid = int(z["mesh_uid"])
            ind = IndicatorField(uid, z["indicators"])
            rmap, diff = None, None
            if "fine_parent" in z:
                rmap = RefinementMap(uid, int(z["fine_uid"]), int(z["n_coarse"]), z["fine_parent"],
                                     z["fine_kept"], int(z["n_coarse_vertices"]),
                                     z["new_vertex_edges"])
                diff = float(z["diff_next"])
            records.append(LevelRecord(i, uid, ind, float(z["energy"]), z["marked"], rmap, diff,
                                       n_elements=ind.values.size))
    return records


def read_run_log(out):
    path = Path(out) / "run_log.csv"
    if not path.is_file():
        raise ConfigError(f"run log not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n = np.array([int(r["n_elements"]) for r in rows])
    eta = np.array([float(r["eta"]) for r in rows])
    return n, eta

