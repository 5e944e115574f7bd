"""Rotated boxes, slabs and cones on Z^d, with boundary classification.

Everything here is immutable and pure; these objects are shared freely
between worker threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

INTERIOR = 0
FRONTAL = 1
OTHER_BOUNDARY = 2
EXTERIOR = 3

CLASS_NAMES = {INTERIOR: "interior", FRONTAL: "frontal",
               OTHER_BOUNDARY: "other_boundary", EXTERIOR: "exterior"}


class InvalidDirectionError(ValueError):
    pass


def unit_moves(d: int) -> np.ndarray:
    """Signed unit moves in the fixed order (+e1, -e1, +e2, -e2, ...)."""
    moves = np.zeros((2 * d, d), dtype=np.int64)
    for j in range(d):
        moves[2 * j, j] = 1
        moves[2 * j + 1, j] = -1
    return moves


@dataclass(frozen=True)
class DirectionSpec:
    """An integer lattice direction l together with its derived quantities."""

    l_int: tuple
    ell: np.ndarray = field(compare=False)
    h: float = field(compare=False)
    l1_norm: int = field(compare=False)
    nu_l: float = field(compare=False)

    @classmethod
    def from_int(cls, l_int) -> "DirectionSpec":
        v = np.asarray(l_int, dtype=np.int64)
        if v.ndim != 1 or not v.any():
            raise InvalidDirectionError(f"direction must be a nonzero integer vector, got {l_int}")
        h = float(np.linalg.norm(v))
        l1 = int(np.abs(v).sum())
        return cls(l_int=tuple(int(c) for c in v), ell=v / h, h=h, l1_norm=l1, nu_l=l1 / h)

    @property
    def d(self) -> int:
        return len(self.l_int)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.l_int, dtype=np.float64)


@dataclass(frozen=True)
class Rotation:
    """Orthogonal map with a prescribed image of e1."""

    matrix: np.ndarray = field(compare=False)
    image_e1: np.ndarray = field(compare=False)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    def axis(self, j: int) -> np.ndarray:
        """Image of e_{j+1}: column j of the matrix."""
        return self.matrix[:, j]

    def coords(self, points: np.ndarray, anchor=None) -> np.ndarray:
        """Coordinates of points in the rotated frame, relative to anchor."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if anchor is not None:
            p = p - np.asarray(anchor, dtype=np.float64)
        return p @ self.matrix


def make_rotation(l_int) -> Rotation:
    """Deterministic orthogonal matrix R with R(e1) = l/|l|_2.

    Householder reflection sending e1 to the unit direction; the identity
    when the direction already is e1.
    """
    v = np.asarray(l_int, dtype=np.float64)
    if v.ndim != 1 or not v.any():
        raise InvalidDirectionError(f"direction must be a nonzero vector, got {l_int}")
    d = v.shape[0]
    u = v / np.linalg.norm(v)
    e1 = np.zeros(d)
    e1[0] = 1.0
    w = e1 - u
    n2 = np.dot(w, w)
    if n2 < 1e-24:
        mat = np.eye(d)
    else:
        mat = np.eye(d) - 2.0 * np.outer(w, w) / n2
    return Rotation(matrix=mat, image_e1=mat[:, 0].copy())


@dataclass(frozen=True)
class BoxSpec:
    """Rotated open box R((-L, L_front) x (-L_tilde, L_tilde)^{d-1}) + anchor.

    Site classes: interior sites are the lattice points of the box; the
    outer 1-boundary splits into the frontal part (beyond the front face,
    inside the transverse window) and the rest; everything else is exterior.
    """

    rotation: Rotation = field(compare=False)
    L: float
    L_front: float
    L_tilde: float
    anchor: tuple = (0, 0)

    def __post_init__(self):
        if min(self.L, self.L_front, self.L_tilde) <= 0:
            raise ValueError("box extents must be positive")

    @property
    def d(self) -> int:
        return self.rotation.d

    def contains(self, x) -> np.ndarray:
        """Vectorized interior membership for an (n, d) site array."""
        c = self.rotation.coords(x, self.anchor)
        inside = (c[:, 0] > -self.L) & (c[:, 0] < self.L_front)
        for j in range(1, self.d):
            inside &= np.abs(c[:, j]) < self.L_tilde
        return inside

    def classify(self, x) -> np.ndarray:
        """Vectorized class codes for an (n, d) site array."""
        pts = np.atleast_2d(np.asarray(x, dtype=np.int64))
        inside = self.contains(pts)
        out = np.full(pts.shape[0], EXTERIOR, dtype=np.int8)
        out[inside] = INTERIOR
        ext = ~inside
        if ext.any():
            # outer 1-boundary: exterior sites adjacent to an interior site
            adj = np.zeros(ext.sum(), dtype=bool)
            cand = pts[ext]
            for mv in unit_moves(self.d):
                adj |= self.contains(cand + mv)
            c = self.rotation.coords(cand, self.anchor)
            frontal = c[:, 0] >= self.L_front
            for j in range(1, self.d):
                frontal &= np.abs(c[:, j]) < self.L_tilde
            codes = np.where(frontal & adj, FRONTAL,
                             np.where(adj, OTHER_BOUNDARY, EXTERIOR)).astype(np.int8)
            out[ext] = codes
        return out

    def bounding_range(self, margin: int = 1):
        """Inclusive integer bounds of a lattice box covering this box."""
        corners = []
        lo = np.array([-self.L] + [-self.L_tilde] * (self.d - 1))
        hi = np.array([self.L_front] + [self.L_tilde] * (self.d - 1))
        for mask in range(1 << self.d):
            c = np.where([(mask >> j) & 1 for j in range(self.d)], hi, lo)
            corners.append(self.rotation.matrix @ c)
        corners = np.array(corners) + np.asarray(self.anchor, dtype=np.float64)
        lo_i = np.floor(corners.min(axis=0)).astype(np.int64) - margin
        hi_i = np.ceil(corners.max(axis=0)).astype(np.int64) + margin
        return lo_i, hi_i


def classify_site(spec: BoxSpec, x) -> str:
    """Class of a single site: interior, frontal, other_boundary or exterior."""
    return CLASS_NAMES[int(spec.classify(np.asarray(x, dtype=np.int64)[None, :])[0])]


@dataclass(frozen=True)
class ConeSpec:
    """Forward cone: sites y with (y - apex).l >= zeta |l|_2 |y - apex|_2."""

    apex: tuple
    l: DirectionSpec
    zeta: float

    def __post_init__(self):
        if not 0 < self.zeta < 1:
            raise ValueError("zeta must lie in (0, 1)")


def cone_contains(c: ConeSpec, y) -> bool:
    rel = np.asarray(y, dtype=np.float64) - np.asarray(c.apex, dtype=np.float64)
    lvec = c.l.as_array()
    return float(rel @ lvec) >= c.zeta * c.l.h * float(np.linalg.norm(rel))


def cone_contains_many(c: ConeSpec, ys: np.ndarray) -> np.ndarray:
    rel = np.asarray(ys, dtype=np.float64) - np.asarray(c.apex, dtype=np.float64)
    lvec = c.l.as_array()
    return rel @ lvec >= c.zeta * c.l.h * np.linalg.norm(rel, axis=-1)


def default_zeta(r_const: float, d: int) -> float:
    """Largest safe cone half-angle parameter, with a 0.9 reproducibility margin.

    The admissible range is open, so a fixed multiplicative safety factor
    keeps the choice deterministic.
    """
    if r_const <= 0:
        raise ValueError("r_const must be positive")
    if d < 2:
        raise ValueError("d must be >= 2")
    lim = min(1.0 / (9 * d), 1.0 / (3 * d * r_const),
              math.cos(math.pi / 2 - math.atan(3 * r_const)))
    return 0.9 * lim


def slab_index(z, ell, L0: float) -> int:
    """Index i of the width-L0 slab [i L0 - L0/2, i L0 + L0/2) containing z.l."""
    if L0 <= 2:
        raise ValueError("slab width must exceed 2")
    t = float(np.dot(np.asarray(z, dtype=np.float64), np.asarray(ell, dtype=np.float64)))
    return int(math.floor(t / L0 + 0.5))
