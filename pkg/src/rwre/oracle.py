"""Exact quenched computations on small instances.

Absorbing-chain exit distributions are solved as sparse linear systems
(direct LU; dense solve for small systems). Full path-law enumeration and
the lazy gambler's-ruin closed form provide independent ground truth for
everything the Monte Carlo layer estimates.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .environment import Environment, Region
from .geometry import BoxSpec, FRONTAL, INTERIOR, OTHER_BOUNDARY, unit_moves

DENSE_CUTOFF = 2000
STATE_CAP = 100_000


class StateCapError(RuntimeError):
    pass


@dataclass
class AbsorptionResult:
    """Solution of one absorbing chain.

    ``per_start[c]`` holds, for every interior site, the probability of
    absorption in class c; ``class_probs`` are those rows at the start.
    """

    class_names: tuple
    class_probs: dict
    start: tuple
    interior_sites: np.ndarray
    per_start: np.ndarray  # (n_interior, n_classes)
    n_states: int

    def prob(self, name: str) -> float:
        return self.class_probs[name]

    def at(self, site) -> np.ndarray:
        key = tuple(int(c) for c in site)
        idx = self._index.get(key)
        if idx is None:
            raise KeyError(f"{key} is not an interior state")
        return self.per_start[idx]

    def __post_init__(self):
        self._index = {tuple(int(c) for c in s): i
                       for i, s in enumerate(self.interior_sites)}


def solve_absorption(env: Environment, classify, class_names, start,
                     bound_lo, bound_hi, state_cap: int = STATE_CAP) -> AbsorptionResult:
    """Solve an absorbing nearest-neighbour chain on a lattice block.

    ``classify`` maps an (n, d) site array to codes: 0 interior, 1..K the
    absorbing classes, -1 unreachable. Transition mass from interior sites
    must stay inside interior + absorbing (checked).
    """
    d = env.d
    lo = np.asarray(bound_lo, dtype=np.int64)
    hi = np.asarray(bound_hi, dtype=np.int64)
    shape = tuple(int(b - a + 1) for a, b in zip(lo, hi))
    sites = Region(tuple(lo), tuple(hi)).sites()
    codes = classify(sites)

    interior = np.nonzero(codes == 0)[0]
    n = interior.size
    if n == 0:
        raise ValueError("no interior states")
    if n > state_cap:
        raise StateCapError(f"{n} interior states exceed the cap {state_cap}")

    # row index per lattice cell of the bounding block, -1 otherwise
    idx_grid = np.full(shape, -1, dtype=np.int64)
    flat_int = interior
    idx_grid.ravel()[flat_int] = np.arange(n)
    code_grid = codes.reshape(shape)

    int_sites = sites[interior]
    probs = env.vectors_block(lo, hi).reshape(-1, 2 * d)[interior]

    k = len(class_names)
    b_mat = np.zeros((n, k), dtype=np.float64)
    rows, cols, vals = [], [], []
    mv = unit_moves(d)
    strides = np.array([int(np.prod(shape[j + 1:])) for j in range(d)], dtype=np.int64)
    rel = int_sites - lo
    flat_pos = rel @ strides
    for m in range(2 * d):
        nb = rel + mv[m]
        # bounding block has margin >= 1 so interior neighbours stay inside
        if np.any(nb < 0) or np.any(nb >= np.asarray(shape)):
            raise ValueError("interior site has a neighbour outside the bounding block; "
                             "enlarge the margin")
        nb_flat = nb @ strides
        nb_code = code_grid.ravel()[nb_flat]
        if np.any(nb_code < 0):
            raise ValueError("transition mass flows to an unreachable state; "
                             "the classifier is inconsistent")
        to_int = nb_code == 0
        if to_int.any():
            rows.append(np.nonzero(to_int)[0])
            cols.append(idx_grid.ravel()[nb_flat[to_int]])
            vals.append(probs[to_int, m])
        for c in range(1, k + 1):
            sel = nb_code == c
            if sel.any():
                b_mat[sel, c - 1] += probs[sel, m]

    q = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)) if rows else sp.csr_matrix((n, n))
    a_mat = sp.identity(n, format="csr") - q
    if n <= DENSE_CUTOFF:
        h = np.linalg.solve(a_mat.toarray(), b_mat)
    else:
        lu = spla.splu(a_mat.tocsc())
        h = lu.solve(b_mat)

    start = tuple(int(c) for c in start)
    start_rel = np.asarray(start, dtype=np.int64) - lo
    row = idx_grid.ravel()[int(start_rel @ strides)]
    if row < 0:
        raise ValueError(f"start {start} is not an interior state")
    class_probs = {name: float(h[row, j]) for j, name in enumerate(class_names)}
    return AbsorptionResult(class_names=tuple(class_names), class_probs=class_probs,
                            start=start, interior_sites=int_sites, per_start=h,
                            n_states=n)


def exit_distribution_exact(env: Environment, box: BoxSpec, start,
                            state_cap: int = STATE_CAP) -> AbsorptionResult:
    """Exact law of the exit class (frontal vs other boundary) of a box.

    Returns absorption probabilities for every interior start; the returned
    class probabilities sum to one up to solver precision.
    """
    lo, hi = box.bounding_range(margin=1)

    def classify(sites):
        codes = box.classify(sites)
        out = np.full(sites.shape[0], -1, dtype=np.int8)
        out[codes == INTERIOR] = 0
        out[codes == FRONTAL] = 1
        out[codes == OTHER_BOUNDARY] = 2
        return out

    return solve_absorption(env, classify, ("frontal", "other_boundary"),
                            start, lo, hi, state_cap=state_cap)


def wrapped_slab_up_probability(probs, a: int, b: int, wrap: int = 7) -> AbsorptionResult:
    """P[level +a before -b] for a constant environment, solved as a chain.

    The transverse coordinates are wrapped on Z_wrap, which leaves the
    level projection of a translation-invariant environment unchanged while
    keeping the solved chain genuinely d-dimensional.
    """
    p = np.asarray(probs, dtype=np.float64)
    d = p.shape[0] // 2
    if a < 1 or b < 1:
        raise ValueError("need a, b >= 1")
    n_lvl = a + b - 1
    n_t = wrap ** (d - 1)
    n = n_lvl * n_t
    t_shape = (wrap,) * (d - 1)

    def enc(lvl, t):
        return (lvl + b - 1) * n_t + int(np.ravel_multi_index(t, t_shape)) if d > 1 else lvl + b - 1

    rows, cols, vals = [], [], []
    b_mat = np.zeros((n, 2), dtype=np.float64)
    for lvl in range(-b + 1, a):
        for t in product(range(wrap), repeat=d - 1):
            i = enc(lvl, t)
            # level moves
            if lvl + 1 >= a:
                b_mat[i, 0] += p[0]
            else:
                rows.append(i); cols.append(enc(lvl + 1, t)); vals.append(p[0])
            if lvl - 1 <= -b:
                b_mat[i, 1] += p[1]
            else:
                rows.append(i); cols.append(enc(lvl - 1, t)); vals.append(p[1])
            for j in range(d - 1):
                for sgn, pm in ((1, p[2 + 2 * j]), (-1, p[3 + 2 * j])):
                    t2 = list(t)
                    t2[j] = (t2[j] + sgn) % wrap
                    rows.append(i); cols.append(enc(lvl, tuple(t2))); vals.append(pm)

    q = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    a_mat = sp.identity(n, format="csr") - q
    if n <= DENSE_CUTOFF:
        h = np.linalg.solve(a_mat.toarray(), b_mat)
    else:
        h = spla.splu(a_mat.tocsc()).solve(b_mat)
    start_row = enc(0, (0,) * (d - 1))
    sites = np.zeros((n, 1), dtype=np.int64)
    res = AbsorptionResult(class_names=("up", "down"),
                           class_probs={"up": float(h[start_row, 0]),
                                        "down": float(h[start_row, 1])},
                           start=(0,) * d, interior_sites=sites, per_start=h,
                           n_states=n)
    return res


def lazy_gr_oracle(p_up: float, p_down: float, a: int, b: int) -> float:
    """P[level projection hits +a before -b] for constant step odds.

    Closed form (1 - r^b) / (1 - r^(a+b)) with r = p_down/p_up; laziness
    (staying probability) cancels.
    """
    if p_up <= 0 or p_down <= 0:
        raise ValueError("need positive step probabilities")
    if a < 1 or b < 1:
        raise ValueError("need integer a, b >= 1")
    r = p_down / p_up
    if abs(r - 1.0) < 1e-14:
        return b / (a + b)
    if r > 1.0:
        s = 1.0 / r
        return (s ** (a + b) - s ** a) / (s ** (a + b) - 1.0)
    return (1.0 - r ** b) / (1.0 - r ** (a + b))


def coupled_law_exact(env: Environment, x0, n: int):
    """Exact n-step path laws of the coupled and the quenched constructions.

    The coupled law is obtained by enumerating every (letter, move)
    sequence; both laws are returned as maps from move tuples to
    probabilities, each summing to one.
    """
    if n > 4:
        raise ValueError("enumeration is limited to n <= 4")
    d = env.d
    kappa = env.kappa
    mv = unit_moves(d)
    one_minus = 1.0 - 2 * d * kappa

    def quenched(pos, depth):
        if depth == 0:
            return {(): 1.0}
        p = env.vector_at(pos)
        out = {}
        for m in range(2 * d):
            sub = quenched(tuple(np.add(pos, mv[m])), depth - 1)
            for path, pr in sub.items():
                out[(m,) + path] = out.get((m,) + path, 0.0) + p[m] * pr
        return out

    def coupled(pos, depth):
        if depth == 0:
            return {(): 1.0}
        p = env.vector_at(pos)
        out = {}
        # letter = a signed unit move, forced step
        for m in range(2 * d):
            sub = coupled(tuple(np.add(pos, mv[m])), depth - 1)
            for path, pr in sub.items():
                out[(m,) + path] = out.get((m,) + path, 0.0) + kappa * pr
        # letter = none, residual kernel step
        for m in range(2 * d):
            w = one_minus * (p[m] - kappa) / one_minus
            sub = coupled(tuple(np.add(pos, mv[m])), depth - 1)
            for path, pr in sub.items():
                out[(m,) + path] = out.get((m,) + path, 0.0) + w * pr
        return out

    x0 = tuple(int(c) for c in x0)
    return coupled(x0, n), quenched(x0, n)


def tv_distance(law_a: dict, law_b: dict) -> float:
    keys = set(law_a) | set(law_b)
    return 0.5 * sum(abs(law_a.get(k, 0.0) - law_b.get(k, 0.0)) for k in keys)
