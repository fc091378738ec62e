"""Conforming triangulations with newest-vertex bisection.

Element ``[v0, v1, v2]`` is stored counter-clockwise with its refinement
edge opposite ``v0`` (so ``v0`` is the newest vertex).  Vertices are never
renumbered by refinement: new midpoints are appended, which makes nodal
prolongation a plain copy plus edge averaging.
"""
from __future__ import annotations

import io
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InputError, PreconditionError

_uid_counter = itertools.count(1)


def next_uid():
    return next(_uid_counter)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


# local edge k is opposite local vertex k
_LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Immutable conforming triangulation.

    Attributes
    ----------
    vertices : (n, 2) float array
    elements : (m, 3) int array, counter-clockwise, refinement edge opposite
        the first vertex
    generations : (m,) int array, number of bisections from the initial mesh
    uid : int, unique per mesh object
    """

    vertices: np.ndarray
    elements: np.ndarray
    generations: np.ndarray
    uid: int = field(default_factory=next_uid)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, float).reshape(-1, 2))
        object.__setattr__(self, "elements", _frozen(self.elements, np.int64).reshape(-1, 3))
        object.__setattr__(self, "generations", _frozen(self.generations, np.int64))
        if self.generations.shape != (self.elements.shape[0],):
            raise PreconditionError("one generation per element required")

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def measures(self):
        return self.areas

    @cached_property
    def signed_areas(self):
        p = self.vertices[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def areas(self):
        return np.abs(self.signed_areas)

    @cached_property
    def _edge_data(self):
        el = self.elements
        m = el.shape[0]
        pairs = el[:, _LOCAL_EDGES].reshape(-1, 2)
        lo = pairs.min(axis=1)
        hi = pairs.max(axis=1)
        key = lo * max(self.n_vertices, 1) + hi
        ukey, inverse = np.unique(key, return_inverse=True)
        n_edges = ukey.size
        edges = np.stack([ukey // max(self.n_vertices, 1), ukey % max(self.n_vertices, 1)], axis=1)
        counts = np.bincount(inverse, minlength=n_edges)
        order = np.argsort(inverse, kind="stable")
        starts = np.searchsorted(inverse[order], np.arange(n_edges))
        owner = np.repeat(np.arange(m), 3)
        edge_elements = np.full((n_edges, 2), -1, dtype=np.int64)
        edge_elements[:, 0] = owner[order[starts]]
        two = counts >= 2
        edge_elements[two, 1] = owner[order[starts[two] + 1]]
        return edges, inverse.reshape(m, 3), edge_elements, counts

    @property
    def edges(self):
        """(n_edges, 2) sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def element_edges(self):
        """(m, 3) edge ids; column k is the edge opposite local vertex k."""
        return self._edge_data[1]

    @property
    def edge_elements(self):
        """(n_edges, 2) adjacent element ids, -1 where absent."""
        return self._edge_data[2]

    @property
    def edge_counts(self):
        return self._edge_data[3]

    @cached_property
    def boundary_edge_mask(self):
        return self.edge_counts == 1

    @property
    def boundary_edges(self):
        """Set of sorted vertex pairs on the domain boundary."""
        return {tuple(e) for e in self.edges[self.boundary_edge_mask].tolist()}

    @cached_property
    def boundary_vertices(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges[self.boundary_edge_mask].ravel()] = True
        return mask

    @cached_property
    def edge_lengths(self):
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    @cached_property
    def diameters(self):
        return self.edge_lengths[self.element_edges].max(axis=1)

    @cached_property
    def barycentric_gradients(self):
        """(m, 3, 2) constant gradients of the three hat functions per element."""
        p = self.vertices[self.elements]
        opp = np.roll(p, -1, axis=1) - np.roll(p, -2, axis=1)  # p_{i+1} - p_{i+2}
        rot = np.stack([-opp[..., 1], opp[..., 0]], axis=-1)
        return -rot / (2.0 * self.signed_areas[:, None, None])

    @cached_property
    def perimeter(self):
        return float(self.edge_lengths[self.boundary_edge_mask].sum())


def shape_regularity(mesh):
    """max over elements of diam(T) / |T|^(1/2)."""
    return float(np.max(mesh.diameters / np.sqrt(mesh.areas)))


def conformity_violations(mesh, perimeter=None, area=None, rtol=1e-12):
    """Edge-incidence audit.  Returns a list of human readable problems.

    A hanging node shows up as extra one-sided edges, so the boundary length
    is compared against ``perimeter`` when given.
    """
    problems = []
    if np.any(mesh.signed_areas <= 0.0):
        problems.append("non-positive signed area")
    if np.any(mesh.edge_counts > 2):
        problems.append("edge shared by more than two elements")
    if perimeter is not None and abs(mesh.perimeter - perimeter) > rtol * 10 * perimeter:
        problems.append(f"boundary length {mesh.perimeter!r} != {perimeter!r} (hanging node)")
    if area is not None and abs(mesh.areas.sum() - area) > rtol * area * 10:
        problems.append("total area changed")
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.elements.ravel()] = True
    if not used.all():
        problems.append("unused vertex")
    return problems


@dataclass(frozen=True, eq=False)
class RefinementMap:
    """Parent/child correspondence between a mesh and its refinement.

    ``fine_parent[i]`` is the coarse element containing fine element ``i``
    and ``fine_kept[i]`` says whether ``i`` *is* that coarse element.
    New vertex ``n_coarse_vertices + k`` is the midpoint of
    ``new_vertex_edges[k]``; endpoints always have smaller indices.
    """

    coarse_uid: int
    fine_uid: int
    n_coarse: int
    fine_parent: np.ndarray
    fine_kept: np.ndarray
    n_coarse_vertices: int
    new_vertex_edges: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "fine_parent", _frozen(self.fine_parent, np.int64))
        object.__setattr__(self, "fine_kept", _frozen(self.fine_kept, bool))
        object.__setattr__(self, "new_vertex_edges",
                           _frozen(self.new_vertex_edges, np.int64).reshape(-1, 2))

    @classmethod
    def identity(cls, mesh):
        n = mesh.n_elements
        return cls(mesh.uid, mesh.uid, n, np.arange(n), np.ones(n, bool),
                   mesh.n_vertices, np.zeros((0, 2), np.int64))

    @property
    def n_fine(self):
        return self.fine_parent.size

    @cached_property
    def kept(self):
        """(k, 2) array of (coarse id, fine id) for unrefined elements."""
        fine = np.nonzero(self.fine_kept)[0]
        return np.stack([self.fine_parent[fine], fine], axis=1)

    @cached_property
    def refined_coarse(self):
        mask = np.ones(self.n_coarse, dtype=bool)
        mask[self.fine_parent[self.fine_kept]] = False
        return np.nonzero(mask)[0]

    @cached_property
    def new_fine(self):
        return np.nonzero(~self.fine_kept)[0]

    @cached_property
    def parent_to_children(self):
        fine = self.new_fine
        out = {}
        for child, parent in zip(fine.tolist(), self.fine_parent[fine].tolist()):
            out.setdefault(parent, []).append(child)
        return {k: tuple(v) for k, v in out.items()}

    def coarse_to_fine_kept(self):
        """Array mapping coarse id -> fine id of the kept copy, -1 if refined."""
        out = np.full(self.n_coarse, -1, dtype=np.int64)
        k = self.kept
        out[k[:, 0]] = k[:, 1]
        return out


def classify_overlap(rmap):
    """Split both meshes into kept pairs, refined coarse ids, new fine ids."""
    return rmap.kept, rmap.refined_coarse, rmap.new_fine


def compose_maps(first, second):
    """Map from the coarse mesh of ``first`` to the fine mesh of ``second``."""
    if first.fine_uid != second.coarse_uid:
        raise PreconditionError(
            f"maps do not chain: {first.fine_uid} != {second.coarse_uid}")
    parent = first.fine_parent[second.fine_parent]
    kept = second.fine_kept & first.fine_kept[second.fine_parent]
    edges = np.concatenate([first.new_vertex_edges, second.new_vertex_edges])
    return RefinementMap(first.coarse_uid, second.fine_uid, first.n_coarse, parent, kept,
                         first.n_coarse_vertices, edges)


def refinement_map_violations(rmap, coarse, fine, rtol=1e-12, q_ctr=0.5):
    """Check the union-of-children, partition and contraction properties."""
    problems = []
    if rmap.coarse_uid != coarse.uid or rmap.fine_uid != fine.uid:
        problems.append("uid mismatch")
        return problems
    if rmap.n_fine != len(fine.measures()):
        problems.append("fine element count mismatch")
        return problems
    cm = np.asarray(coarse.measures())
    fm = np.asarray(fine.measures())
    sums = np.bincount(rmap.fine_parent, weights=fm, minlength=rmap.n_coarse)
    if np.any(np.abs(sums - cm) > rtol * 10 * cm):
        problems.append("children do not cover their parent")
    kept = rmap.kept
    if np.any(np.abs(fm[kept[:, 1]] - cm[kept[:, 0]]) > rtol * cm[kept[:, 0]]):
        problems.append("kept element changed size")
    if np.bincount(rmap.fine_parent[rmap.fine_kept], minlength=rmap.n_coarse).max(initial=0) > 1:
        problems.append("coarse element kept twice")
    new = rmap.new_fine
    if np.any(fm[new] > q_ctr * cm[rmap.fine_parent[new]] * (1 + rtol)):
        problems.append("strict child larger than q_ctr * parent")
    return problems


def _validate_ids(marked, n):
    ids = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                               dtype=np.int64).ravel())
    if ids.size and (ids[0] < 0 or ids[-1] >= n):
        bad = ids[(ids < 0) | (ids >= n)]
        raise PreconditionError(f"unknown element id(s) {bad[:5].tolist()}")
    return ids


def refine_nvb(mesh, marked):
    """Newest-vertex bisection with conforming closure.

    Every marked element has its refinement edge bisected; closure marks the
    refinement edge of any element with a marked edge until stable, then each
    element is split into 2, 3 or 4 children.

    Returns
    -------
    (Mesh2D, RefinementMap)
    """
    ids = _validate_ids(marked, mesh.n_elements)
    if ids.size == 0:
        return mesh, RefinementMap.identity(mesh)
    E = mesh.element_edges
    edge_marked = np.zeros(mesh.edges.shape[0], dtype=bool)
    edge_marked[E[ids, 0]] = True
    while True:
        em = edge_marked[E]
        need = em.any(axis=1) & ~em[:, 0]
        if not need.any():
            break
        edge_marked[E[need, 0]] = True

    nv = mesh.n_vertices
    medges = np.nonzero(edge_marked)[0]
    mid = np.full(edge_marked.size, -1, dtype=np.int64)
    mid[medges] = nv + np.arange(medges.size)
    ends = mesh.edges[medges]
    new_xy = 0.5 * (mesh.vertices[ends[:, 0]] + mesh.vertices[ends[:, 1]])

    el = mesh.elements
    gen = mesh.generations
    m0, m1, m2 = mid[E[:, 0]], mid[E[:, 1]], mid[E[:, 2]]
    v0, v1, v2 = el[:, 0], el[:, 1], el[:, 2]
    case = np.where(m0 < 0, 0,
                    np.where(m1 < 0, np.where(m2 < 0, 1, 2), np.where(m2 < 0, 3, 4)))
    counts = np.array([1, 2, 3, 3, 4])[case]
    offsets = np.cumsum(counts) - counts
    total = int(counts.sum())
    new_el = np.empty((total, 3), dtype=np.int64)
    new_gen = np.empty(total, dtype=np.int64)

    def put(mask, slot, a, b, c, dg):
        idx = offsets[mask] + slot
        new_el[idx, 0] = a[mask]
        new_el[idx, 1] = b[mask]
        new_el[idx, 2] = c[mask]
        new_gen[idx] = gen[mask] + dg

    k = case == 0
    put(k, 0, v0, v1, v2, 0)
    k = case == 1
    put(k, 0, m0, v0, v1, 1)
    put(k, 1, m0, v2, v0, 1)
    k = case == 2
    put(k, 0, m2, m0, v0, 2)
    put(k, 1, m2, v1, m0, 2)
    put(k, 2, m0, v2, v0, 1)
    k = case == 3
    put(k, 0, m0, v0, v1, 1)
    put(k, 1, m1, m0, v2, 2)
    put(k, 2, m1, v0, m0, 2)
    k = case == 4
    put(k, 0, m2, m0, v0, 2)
    put(k, 1, m2, v1, m0, 2)
    put(k, 2, m1, m0, v2, 2)
    put(k, 3, m1, v0, m0, 2)

    fine = Mesh2D(np.vstack([mesh.vertices, new_xy]), new_el, new_gen)
    rmap = RefinementMap(mesh.uid, fine.uid, mesh.n_elements,
                         np.repeat(np.arange(mesh.n_elements), counts),
                         np.repeat(case == 0, counts), nv, ends)
    return fine, rmap


def refine_uniform(mesh, times=1):
    rmap = None
    for _ in range(times):
        mesh, step = refine_nvb(mesh, np.arange(mesh.n_elements))
        rmap = step if rmap is None else compose_maps(rmap, step)
    return mesh, rmap


# ---------------------------------------------------------------------------
# initial meshes and text format


def _orient_and_tag(vertices, triangles):
    """CCW orientation plus longest-edge refinement tags (ties: smallest
    opposite vertex index)."""
    tri = np.array(triangles, dtype=np.int64).reshape(-1, 3).copy()
    p = vertices[tri]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    cw = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tri[cw] = tri[cw][:, [0, 2, 1]]
    p = vertices[tri]
    lengths = np.stack([np.linalg.norm(p[:, (k + 2) % 3] - p[:, (k + 1) % 3], axis=1)
                        for k in range(3)], axis=1)
    out = np.empty_like(tri)
    for i in range(tri.shape[0]):
        lmax = lengths[i].max()
        cand = [k for k in range(3) if lengths[i, k] >= lmax * (1 - 1e-12)]
        k = min(cand, key=lambda c: tri[i, c])
        out[i] = tri[i, [k, (k + 1) % 3, (k + 2) % 3]]
    return out


def _check_arrays(vertices, triangles, vline=None, tline=None):
    """Validate an initial triangulation; line numbers feed error messages."""
    def where(kind, i):
        lines = vline if kind == "v" else tline
        if lines is not None:
            return f"line {lines[i]}"
        return f"{'vertex' if kind == 'v' else 'triangle'} {i}"

    if vertices.ndim != 2 or vertices.shape[1] != 2 or vertices.shape[0] < 3:
        raise InputError("need at least three 2D vertices")
    if not np.all(np.isfinite(vertices)):
        i = int(np.nonzero(~np.isfinite(vertices).all(axis=1))[0][0])
        raise InputError(f"{where('v', i)}: non-finite coordinate")
    seen = {}
    for i, xy in enumerate(map(tuple, vertices.tolist())):
        if xy in seen:
            raise InputError(f"{where('v', i)}: repeated vertex {xy} "
                             f"(same as {where('v', seen[xy])})")
        seen[xy] = i
    if triangles.size == 0:
        raise InputError("no triangles")
    n = vertices.shape[0]
    for i, t in enumerate(triangles.tolist()):
        if min(t) < 0 or max(t) >= n:
            raise InputError(f"{where('t', i)}: vertex index out of range")
        if len(set(t)) != 3:
            raise InputError(f"{where('t', i)}: repeated vertex index in triangle")
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    scale = np.ptp(vertices, axis=0).max()
    tiny = area <= 1e-14 * scale**2
    if tiny.any():
        raise InputError(f"{where('t', int(np.nonzero(tiny)[0][0]))}: degenerate triangle")
    used = np.zeros(n, bool)
    used[triangles.ravel()] = True
    if not used.all():
        raise InputError(f"{where('v', int(np.nonzero(~used)[0][0]))}: vertex not used by any triangle")


def initial_mesh_from_arrays(vertices, triangles, _lines=None):
    """Validate, orient and tag an initial triangulation (generation 0)."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    vline, tline = _lines if _lines else (None, None)
    _check_arrays(vertices, triangles, vline, tline)
    mesh = Mesh2D(vertices, _orient_and_tag(vertices, triangles), np.zeros(len(triangles), np.int64))
    if np.any(mesh.edge_counts > 2):
        raise InputError("edge shared by more than two triangles")
    # hanging vertices: a vertex strictly inside a one-sided edge
    bnd = mesh.edges[mesh.boundary_edge_mask]
    a = mesh.vertices[bnd[:, 0]]
    b = mesh.vertices[bnd[:, 1]]
    for j, xy in enumerate(mesh.vertices):
        ab = b - a
        t = np.einsum("ij,ij->i", xy - a, ab) / np.einsum("ij,ij->i", ab, ab)
        cross = ab[:, 0] * (xy[1] - a[:, 1]) - ab[:, 1] * (xy[0] - a[:, 0])
        on = (t > 1e-12) & (t < 1 - 1e-12) & (np.abs(cross) <= 1e-12 * np.einsum("ij,ij->i", ab, ab))
        if on.any():
            where = f"line {vline[j]}" if vline is not None else f"vertex {j}"
            raise InputError(f"{where}: hanging vertex on an edge (non-conforming triangulation)")
    return mesh


UNIT_SQUARE = (np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
               np.array([[0, 1, 2], [0, 2, 3]]))

# three unit squares, every diagonal through the re-entrant corner (0, 0)
L_SHAPE = (np.array([[-1.0, -1.0], [0.0, -1.0], [1.0, -1.0], [-1.0, 0.0],
                     [0.0, 0.0], [1.0, 0.0], [-1.0, 1.0], [0.0, 1.0]]),
           np.array([[0, 1, 4], [0, 4, 3], [1, 2, 4], [2, 5, 4], [3, 4, 7], [3, 7, 6]]))


def make_initial_mesh(domain):
    """Initial mesh for ``"unit_square"``, ``"lshape"`` or a triangulation file."""
    if isinstance(domain, str) and domain in ("unit_square", "square"):
        return initial_mesh_from_arrays(*UNIT_SQUARE)
    if isinstance(domain, str) and domain in ("lshape", "l_shape", "L"):
        return initial_mesh_from_arrays(*L_SHAPE)
    path = Path(domain)
    if not path.is_file():
        raise InputError(f"unknown domain or missing triangulation file: {domain}")
    vertices, triangles, _, vline, tline = _parse_mesh_text(path.read_text(), str(path))
    return initial_mesh_from_arrays(vertices, triangles, (vline, tline))


def _parse_mesh_text(text, name="<string>"):
    lines = text.splitlines()
    vertices, triangles, gens, vline, tline = [], [], [], [], []
    header_seen = False
    for no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header_seen:
            if line.split() != ["mesh2d", "v1"]:
                raise InputError(f"{name} line {no}: expected header 'mesh2d v1'")
            header_seen = True
            continue
        parts = line.split()
        try:
            if parts[0] == "v" and len(parts) == 3:
                vertices.append((float(parts[1]), float(parts[2])))
                vline.append(no)
            elif parts[0] == "t" and len(parts) in (4, 5):
                triangles.append(tuple(int(x) for x in parts[1:4]))
                gens.append(int(parts[4]) if len(parts) == 5 else 0)
                tline.append(no)
            else:
                raise ValueError
        except ValueError:
            raise InputError(f"{name} line {no}: cannot parse {raw.strip()!r}") from None
    if not header_seen:
        raise InputError(f"{name}: empty mesh file")
    return (np.array(vertices, dtype=float).reshape(-1, 2),
            np.array(triangles, dtype=np.int64).reshape(-1, 3),
            np.array(gens, dtype=np.int64), vline, tline)


def write_mesh(mesh, dest):
    """Write the ``mesh2d v1`` text format (shortest round-trip floats)."""
    buf = io.StringIO()
    buf.write("mesh2d v1\n")
    for x, y in mesh.vertices.tolist():
        buf.write(f"v {x!r} {y!r}\n")
    for (a, b, c), g in zip(mesh.elements.tolist(), mesh.generations.tolist()):
        buf.write(f"t {a} {b} {c} {g}\n")
    text = buf.getvalue()
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        Path(dest).write_text(text)
    return text


def read_mesh(src):
    """Read a ``mesh2d v1`` file exactly (ordering and generations kept)."""
    if isinstance(src, Path) or (isinstance(src, str) and "\n" not in src):
        text, name = Path(src).read_text(), str(src)
    else:
        text, name = str(src), "<string>"
    vertices, triangles, gens, _, _ = _parse_mesh_text(text, name)
    return Mesh2D(vertices, triangles, gens)
