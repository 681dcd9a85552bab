"""Halfspace and vertex representations of convex polytopes.

Sets are carried in whichever representation an operation needs; there is
no general H <-> V conversion.  Boxes and balls generate both.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

VERTEX_CAP = 4096
DUPLICATE_TOL = 1e-12


class PolytopeError(ValueError):
    pass


@dataclass(frozen=True)
class Halfspace:
    """``<normal, x> <= offset``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        c = np.asarray(self.normal, dtype=float).ravel()
        if not np.all(np.isfinite(c)) or not np.isfinite(self.offset):
            raise PolytopeError("halfspace entries must be finite")
        if not np.any(c):
            raise PolytopeError("halfspace normal must be non-zero")
        object.__setattr__(self, "normal", c)
        object.__setattr__(self, "offset", float(self.offset))


@dataclass(frozen=True)
class HPolytope:
    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.normals, dtype=float))
        b = np.asarray(self.offsets, dtype=float).ravel()
        if a.shape[0] == 0:
            raise PolytopeError("H-polytope needs at least one halfspace")
        if a.shape[0] != b.size:
            raise PolytopeError("normals and offsets disagree on face count")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise PolytopeError("H-polytope entries must be finite")
        if np.any(~a.any(axis=1)):
            raise PolytopeError("H-polytope has an all-zero normal")
        object.__setattr__(self, "normals", a)
        object.__setattr__(self, "offsets", b)

    @classmethod
    def from_halfspaces(cls, faces: Sequence[Halfspace]) -> "HPolytope":
        return cls(np.array([f.normal for f in faces]), np.array([f.offset for f in faces]))

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def face_count(self) -> int:
        return self.normals.shape[0]

    def face(self, j: int) -> Halfspace:
        return Halfspace(self.normals[j], self.offsets[j])

    def halfspaces(self) -> list[Halfspace]:
        return [self.face(j) for j in range(self.face_count)]

    def margins(self, x) -> np.ndarray:
        """``offset - <normal, x>`` per face; negative entries are violations.

        ``x`` may be a single point or a stack of points (last axis = dim).
        """
        return self.offsets - np.asarray(x, dtype=float) @ self.normals.T


@dataclass(frozen=True)
class VPolytope:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if v.shape[0] == 0:
            raise PolytopeError("V-polytope needs at least one vertex")
        if not np.all(np.isfinite(v)):
            raise PolytopeError("vertex entries must be finite")
        keep = []
        for i, row in enumerate(v):
            if all(np.abs(row - v[k]).max() > DUPLICATE_TOL for k in keep):
                keep.append(i)
        object.__setattr__(self, "vertices", v[keep])

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def __len__(self) -> int:
        return self.vertices.shape[0]


@dataclass(frozen=True)
class PolytopePair:
    """The same set in both representations (either side may be absent)."""

    h: HPolytope | None = None
    v: VPolytope | None = None

    @property
    def dim(self) -> int:
        return (self.h or self.v).dim


def contains(p: HPolytope, x, tol: float = 0.0) -> bool:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != p.dim:
        raise PolytopeError(f"point has dim {x.size}, polytope has dim {p.dim}")
    return bool(np.all(p.normals @ x <= p.offsets + tol))


def support_vertex(p: VPolytope, direction) -> tuple[np.ndarray, float, int]:
    """Maximise ``<direction, v>`` over the vertices; lowest index wins ties."""
    d = np.asarray(direction, dtype=float).ravel()
    if d.size != p.dim:
        raise PolytopeError(f"direction has dim {d.size}, polytope has dim {p.dim}")
    values = p.vertices @ d
    k = int(np.argmax(values))
    return p.vertices[k].copy(), float(values[k]), k


def box(lo, hi) -> PolytopePair:
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    if lo.shape != hi.shape:
        raise PolytopeError("box bounds differ in length")
    if np.any(lo > hi):
        raise PolytopeError("box has lo > hi in some coordinate")
    d = lo.size
    normals = np.vstack([-np.eye(d), np.eye(d)])
    offsets = np.concatenate([-lo, hi])
    # interleave so each coordinate's pair of faces sits together: -x_k <= -lo_k, x_k <= hi_k
    order = np.ravel(np.column_stack([np.arange(d), np.arange(d) + d]))
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    return PolytopePair(HPolytope(normals[order], offsets[order]), VPolytope(corners))


def ball_vpolytope(rho: float, dim: int, resolution: int = 8) -> VPolytope:
    """Inscribed vertex approximation of the Euclidean ball of radius ``rho``."""
    if rho <= 0:
        raise PolytopeError("ball radius must be positive")
    if dim == 1:
        return VPolytope(np.array([[-rho], [rho]]))
    if dim == 2:
        if resolution < 3:
            raise PolytopeError("a 2-D ball needs resolution >= 3")
        theta = 2 * np.pi * np.arange(resolution) / resolution
        pts = rho * np.column_stack([np.cos(theta), np.sin(theta)])
        pts[np.abs(pts) < 1e-15 * rho] = 0.0
        return VPolytope(pts)
    eye = np.eye(dim)
    return VPolytope(rho * np.vstack([eye, -eye]))


def product(ps: Sequence[VPolytope], cap: int = VERTEX_CAP) -> VPolytope:
    """Cartesian product; vertices in lexicographic order, first factor slowest."""
    if not ps:
        raise PolytopeError("empty product")
    total = int(np.prod([len(p) for p in ps]))
    if total > cap:
        raise PolytopeError(f"product has {total} vertices, cap is {cap}")
    rows = [np.concatenate(combo) for combo in itertools.product(*(p.vertices for p in ps))]
    return VPolytope(np.array(rows))


def product_h(ps: Sequence[HPolytope]) -> HPolytope:
    if not ps:
        raise PolytopeError("empty product")
    dims = [p.dim for p in ps]
    faces = [lift_face(f, i, dims) for i, p in enumerate(ps) for f in p.halfspaces()]
    return HPolytope.from_halfspaces(faces)


def block_offsets(block_dims: Sequence[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(block_dims)]).astype(int)


def lift_face(face: Halfspace, agent_index: int, block_dims: Sequence[int]) -> Halfspace:
    if not 0 <= agent_index < len(block_dims):
        raise PolytopeError(f"agent index {agent_index} out of range")
    if face.normal.size != block_dims[agent_index]:
        raise PolytopeError("face dimension does not match the agent block")
    off = block_offsets(block_dims)
    normal = np.zeros(off[-1])
    normal[off[agent_index]:off[agent_index + 1]] = face.normal
    return Halfspace(normal, face.offset)


def hull_sample(p: VPolytope, rng: np.random.Generator, size: int) -> np.ndarray:
    """Random convex combinations of the vertices (flat Dirichlet weights)."""
    w = rng.dirichlet(np.ones(len(p)), size=size)
    return w @ p.vertices
