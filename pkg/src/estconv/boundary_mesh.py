"""Partitions of closed polygons into segments, with 1-irregular bisection."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InputError, PreconditionError
from .mesh2d import RefinementMap, _frozen, _validate_ids, next_uid


@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Segments ``[i0, i1]`` of a closed polygon, stored in cyclic order."""

    vertices: np.ndarray
    segments: np.ndarray
    generations: np.ndarray
    uid: int = field(default_factory=next_uid)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, float).reshape(-1, 2))
        object.__setattr__(self, "segments", _frozen(self.segments, np.int64).reshape(-1, 2))
        object.__setattr__(self, "generations", _frozen(self.generations, np.int64))

    @property
    def n_elements(self):
        return self.segments.shape[0]

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @cached_property
    def starts(self):
        return self.vertices[self.segments[:, 0]]

    @cached_property
    def ends(self):
        return self.vertices[self.segments[:, 1]]

    @cached_property
    def lengths(self):
        return np.linalg.norm(self.ends - self.starts, axis=1)

    def measures(self):
        return self.lengths

    @cached_property
    def tangents(self):
        return (self.ends - self.starts) / self.lengths[:, None]

    @property
    def length(self):
        return float(self.lengths.sum())

    @cached_property
    def diameter(self):
        v = self.vertices
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def neighbor_ratio(self):
        """max |T'|/|T| over cyclically adjacent segments."""
        lengths = self.lengths
        nxt = np.roll(lengths, -1)
        return float(max(np.max(nxt / lengths), np.max(lengths / nxt)))

    def chain_violations(self):
        problems = []
        if not np.array_equal(self.segments[:, 1], np.roll(self.segments[:, 0], -1)):
            problems.append("segments do not chain cyclically")
        if np.any(self.lengths <= 0):
            problems.append("zero-length segment")
        g = self.generations
        if np.any(np.abs(g - np.roll(g, -1)) > 1):
            problems.append("adjacent generations differ by more than one")
        return problems


def square(side, center=(0.0, 0.0)):
    cx, cy = center
    h = 0.5 * side
    return np.array([[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h]])


def regular_polygon(n, radius, phase=0.0):
    t = phase + 2.0 * np.pi * np.arange(n) / n
    return radius * np.stack([np.cos(t), np.sin(t)], axis=1)


def _segments_cross(p, q, r, s):
    """Proper intersection of segments pq and rs (shared endpoints excluded)."""
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    return (orient(p, q, r) * orient(p, q, s) < 0) and (orient(r, s, p) * orient(r, s, q) < 0)


def make_boundary_mesh(curve, n0=1):
    """Split every polygon edge into ``n0`` equal segments (generation 0).

    The polygon is oriented counter-clockwise.  Its diameter must be below
    one so that the logarithmic single layer operator is elliptic.
    """
    v = np.asarray(curve, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
        raise InputError("a closed polygon needs at least three 2D vertices")
    if not np.all(np.isfinite(v)):
        raise InputError("non-finite polygon coordinate")
    if int(n0) != n0 or n0 < 1:
        raise PreconditionError("n0 must be a positive integer")
    n0 = int(n0)
    k = v.shape[0]
    nxt = np.roll(v, -1, axis=0)
    if np.any(np.linalg.norm(nxt - v, axis=1) == 0.0):
        raise InputError("repeated consecutive polygon vertex")
    if len({tuple(p) for p in v.tolist()}) != k:
        raise InputError("repeated polygon vertex")
    for i in range(k):
        for j in range(i + 2, k):
            if i == 0 and j == k - 1:
                continue
            if _segments_cross(v[i], nxt[i], v[j], nxt[j]):
                raise InputError(f"polygon edges {i} and {j} intersect")
    area = 0.5 * np.sum(v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1])
    if area < 0:
        v = v[::-1].copy()
        nxt = np.roll(v, -1, axis=0)
    d = v[:, None, :] - v[None, :, :]
    diam = float(np.sqrt((d**2).sum(-1)).max())
    if diam >= 1.0:
        raise PreconditionError(
            f"polygon diameter {diam:.6g} >= 1: the logarithmic single layer operator "
            "is only guaranteed elliptic for diam < 1")
    t = np.arange(n0) / n0
    pts = (v[:, None, :] + t[None, :, None] * (nxt - v)[:, None, :]).reshape(-1, 2)
    m = pts.shape[0]
    segs = np.stack([np.arange(m), (np.arange(m) + 1) % m], axis=1)
    return BoundaryMesh(pts, segs, np.zeros(m, np.int64))


def refine_boundary(mesh, marked):
    """Bisect marked segments at their midpoints plus the 1-irregular closure.

    Closure adds an unrefined neighbor whenever refining would leave a
    generation gap larger than one.
    """
    ids = _validate_ids(marked, mesh.n_elements)
    if ids.size == 0:
        return mesh, RefinementMap.identity(mesh)
    m = mesh.n_elements
    g = mesh.generations
    refine = np.zeros(m, dtype=bool)
    refine[ids] = True
    while True:
        add = np.zeros(m, dtype=bool)
        for shift in (1, -1):
            nb_ref = np.roll(refine, shift)
            nb_gen = np.roll(g, shift)
            # neighbor (at offset -shift) is refined and i is not, with g_i < g_nb
            add |= ~refine & nb_ref & (g < nb_gen)
        if not add.any():
            break
        refine |= add

    nv = mesh.n_vertices
    r_ids = np.nonzero(refine)[0]
    mids = np.full(m, -1, dtype=np.int64)
    mids[r_ids] = nv + np.arange(r_ids.size)
    ends = mesh.segments[r_ids]
    new_xy = 0.5 * (mesh.vertices[ends[:, 0]] + mesh.vertices[ends[:, 1]])
    counts = np.where(refine, 2, 1)
    offsets = np.cumsum(counts) - counts
    total = int(counts.sum())
    segs = np.empty((total, 2), dtype=np.int64)
    gens = np.empty(total, dtype=np.int64)
    keep = ~refine
    segs[offsets[keep]] = mesh.segments[keep]
    gens[offsets[keep]] = g[keep]
    o = offsets[r_ids]
    segs[o, 0] = mesh.segments[r_ids, 0]
    segs[o, 1] = mids[r_ids]
    segs[o + 1, 0] = mids[r_ids]
    segs[o + 1, 1] = mesh.segments[r_ids, 1]
    gens[o] = g[r_ids] + 1
    gens[o + 1] = g[r_ids] + 1
    fine = BoundaryMesh(np.vstack([mesh.vertices, new_xy]), segs, gens)
    rmap = RefinementMap(mesh.uid, fine.uid, m, np.repeat(np.arange(m), counts),
                         np.repeat(keep, counts), nv, ends)
    return fine, rmap


def read_polygon(path):
    """Read ``x y`` vertex lines (``#`` comments allowed)."""
    pts = []
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) != 2:
                raise ValueError
            pts.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise InputError(f"{path} line {no}: cannot parse {raw.strip()!r}") from None
    return np.array(pts).reshape(-1, 2)


def write_boundary_mesh(mesh, dest):
    buf = io.StringIO()
    buf.write("bmesh v1\n")
    for x, y in mesh.vertices.tolist():
        buf.write(f"v {x!r} {y!r}\n")
    for (a, b), gen in zip(mesh.segments.tolist(), mesh.generations.tolist()):
        buf.write(f"s {a} {b} {gen}\n")
    text = buf.getvalue()
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        Path(dest).write_text(text)
    return text


def read_boundary_mesh(src):
    if isinstance(src, Path) or (isinstance(src, str) and "\n" not in src):
        text, name = Path(src).read_text(), str(src)
    else:
        text, name = str(src), "<string>"
    verts, segs, gens = [], [], []
    header = False
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header:
            if line.split() != ["bmesh", "v1"]:
                raise InputError(f"{name} line {no}: expected header 'bmesh v1'")
            header = True
            continue
        p = line.split()
        try:
            if p[0] == "v" and len(p) == 3:
                verts.append((float(p[1]), float(p[2])))
            elif p[0] == "s" and len(p) == 4:
                segs.append((int(p[1]), int(p[2])))
                gens.append(int(p[3]))
            else:
                raise ValueError
        except ValueError:
            raise InputError(f"{name} line {no}: cannot parse {raw.strip()!r}") from None
    return BoundaryMesh(np.array(verts).reshape(-1, 2), np.array(segs, dtype=np.int64).reshape(-1, 2),
                        np.array(gens, dtype=np.int64))
