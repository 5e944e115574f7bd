"""Scale ladders, box lattices and recursive good/bad box classification.

Two ladders are built: a fast-growing geometric one driving the
finite-box criterion recursion, and an exact integer one driving the
polynomial-condition renormalization. Production-scale parameters are
computationally infeasible beyond the first level, so a structurally
identical "mini" preset (smaller margin divisors, transverse exponent 1,
smaller level multiplier) is provided for structural tests; every report
states which preset produced it.

Box-on-box predicates (containment, disjointness) use interval arithmetic
in the rotated frame; for the axis-aligned rotations used throughout this
module the predicates coincide with the discrete-set ones, which the
brute-force classifier checks explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from . import rng
from .environment import Environment
from .geometry import BoxSpec, Rotation, make_rotation
from .oracle import exit_distribution_exact
from .stats import binomial_ci, rule_of_three

EC_V = 16
EC_ALPHA = 320


# ---------------------------------------------------------------------------
# ladders


@dataclass(frozen=True)
class ScaleLadderEC:
    """Geometric ladder: L_{k+1} = N_k L_k, Lt_{k+1} = N_k^4 Lt_k."""

    d: int
    L0: float
    Lt0: float
    u0: float
    a0: float
    L: tuple
    Lt: tuple
    N: tuple
    a: tuple
    u: tuple

    def closed_form_L(self, k: int) -> float:
        nu1 = math.sqrt(self.d)
        return (EC_ALPHA * nu1 / self.u0) ** k * EC_V ** (k * (k - 1) / 2) * self.L0

    def closed_form_Lt(self, k: int) -> float:
        return (self.closed_form_L(k) / self.L0) ** 4 * self.Lt0


def build_ladder_ec(L0: float, Lt0: float, u0: float, a0: float, k_max: int,
                    d: int = 2) -> ScaleLadderEC:
    if not (0 < u0 < 1):
        raise ValueError("u0 must lie in (0,1)")
    if not (0 < a0 <= 1):
        raise ValueError("a0 must lie in (0,1]")
    if not (L0 <= Lt0 <= L0 ** 4):
        raise ValueError("need L0 <= Lt0 <= L0^4")
    nu1 = math.sqrt(d)
    L = [float(L0)]
    Lt = [float(Lt0)]
    N = [EC_ALPHA * nu1 / u0 * EC_V ** k for k in range(k_max + 1)]
    for k in range(k_max):
        L.append(N[k] * L[-1])
        Lt.append(N[k] ** 4 * Lt[-1])
    a = tuple(a0 * 4.0 ** (-k) for k in range(k_max + 1))
    u = tuple(u0 * float(EC_V) ** (-k) for k in range(k_max + 1))
    return ScaleLadderEC(d=d, L0=float(L0), Lt0=float(Lt0), u0=u0, a0=a0,
                         L=tuple(L), Lt=tuple(Lt), N=tuple(N), a=a, u=u)


@dataclass(frozen=True)
class ScaleLadderPoly:
    """Exact integer ladder N_{k+1} = multiplier * v^{k+1} * N_k."""

    d: int
    N0: int
    kappa: float
    v: int
    multiplier: int
    N: tuple
    ratio_divisible_110: bool

    def ratio(self, k: int) -> int:
        return self.N[k] // self.N[k - 1]


def poly_multiplier(N0: int, kappa: float, d: int) -> int:
    nu1 = math.sqrt(d)
    return int(math.floor(15 * nu1 * N0 * math.log(1.0 / (2 * kappa))
                          / (2 * math.log(N0)))) + 1


def build_ladder_poly(N0: int, kappa: float, k_max: int, d: int = 2,
                      multiplier_override: int | None = None,
                      v: int = 44) -> ScaleLadderPoly:
    if N0 < 3 * math.sqrt(d):
        raise ValueError(f"N0 must be at least 3*sqrt(d) = {3*math.sqrt(d):.3f}")
    mult = poly_multiplier(N0, kappa, d) if multiplier_override is None else int(multiplier_override)
    n = [int(N0)]
    for k in range(k_max):
        n.append(mult * v ** (k + 1) * n[-1])
    div = all((n[k] // n[k - 1]) % 110 == 0 for k in range(1, len(n))) if k_max >= 1 else mult % 110 == 0
    return ScaleLadderPoly(d=d, N0=int(N0), kappa=kappa, v=v, multiplier=mult,
                           N=tuple(n), ratio_divisible_110=div)


# ---------------------------------------------------------------------------
# box families


@dataclass(frozen=True)
class RenormPreset:
    """Margin divisors and exponents of the renormalization box family."""

    name: str
    front_div: int
    trans_div: int
    trans_exp: int
    good_exp: int
    v: int
    multiplier_override: int | None = None

    def covering_modulus(self) -> int:
        return (self.front_div * self.trans_div) // math.gcd(self.front_div, self.trans_div)


PAPER_PRESET = RenormPreset("paper", front_div=11, trans_div=10, trans_exp=3,
                            good_exp=5, v=44)
MINI_PRESET = RenormPreset("mini", front_div=3, trans_div=2, trans_exp=1,
                           good_exp=1, v=6, multiplier_override=1)


def preset_by_name(name: str) -> RenormPreset:
    return {"paper": PAPER_PRESET, "mini": MINI_PRESET}[name]


@dataclass(frozen=True)
class PolyBoxes:
    """The anchored box family of one ladder at one rotation."""

    rotation: Rotation
    ladder: ScaleLadderPoly
    preset: RenormPreset

    @property
    def d(self) -> int:
        return self.rotation.d

    def N(self, k: int) -> int:
        return self.ladder.N[k]

    def spacing(self, k: int) -> np.ndarray:
        n = self.N(k)
        return np.array([n] + [n ** self.preset.trans_exp] * (self.d - 1), dtype=np.int64)

    def extent(self, k: int) -> np.ndarray:
        return self.spacing(k).astype(np.float64)

    def margins(self, k: int) -> np.ndarray:
        e = self.extent(k)
        m = e.copy()
        m[0] /= self.preset.front_div
        m[1:] /= self.preset.trans_div
        return m

    def b2_spec(self, k: int, z) -> BoxSpec:
        """The enlarged box as a BoxSpec (anchor at its transverse center)."""
        e = self.extent(k)
        m = self.margins(k)
        center = np.zeros(self.d)
        center[1:] = e[1:] / 2.0
        anchor = self.rotation.matrix @ (np.asarray(z, dtype=np.float64) + center)
        return BoxSpec(self.rotation, L=float(m[0]),
                       L_front=float(e[0] + m[0]),
                       L_tilde=float(e[1] / 2.0 + m[1]) if self.d > 1 else 1.0,
                       anchor=tuple(anchor))

    def _coords(self, z, sites):
        return self.rotation.coords(sites) - np.asarray(z, dtype=np.float64)

    def btilde_contains(self, k: int, z, sites) -> np.ndarray:
        """Closed base box [0, N] x [0, N^e]^{d-1} at anchor z."""
        c = self._coords(z, sites)
        e = self.extent(k)
        ok = (c[:, 0] >= 0) & (c[:, 0] <= e[0])
        for j in range(1, self.d):
            ok &= (c[:, j] >= 0) & (c[:, j] <= e[j])
        return ok

    def bdot_contains(self, k: int, z, sites) -> np.ndarray:
        """Open core box (0, N) x (0, N^e)^{d-1} at anchor z."""
        c = self._coords(z, sites)
        e = self.extent(k)
        ok = (c[:, 0] > 0) & (c[:, 0] < e[0])
        for j in range(1, self.d):
            ok &= (c[:, j] > 0) & (c[:, j] < e[j])
        return ok

    def b2_contains(self, k: int, z, sites) -> np.ndarray:
        c = self._coords(z, sites)
        e = self.extent(k)
        m = self.margins(k)
        ok = (c[:, 0] > -m[0]) & (c[:, 0] < e[0] + m[0])
        for j in range(1, self.d):
            ok &= (c[:, j] > -m[j]) & (c[:, j] < e[j] + m[j])
        return ok

    def btilde_sites(self, k: int, z) -> np.ndarray:
        """Lattice sites of the closed base box, axis rotations only."""
        e = self.extent(k)
        z = np.asarray(z, dtype=np.float64)
        lo_r = z
        hi_r = z + e
        corners = np.array([self.rotation.matrix @ np.where(
            [(mask >> j) & 1 for j in range(self.d)], hi_r, lo_r)
            for mask in range(1 << self.d)])
        lo_i = np.floor(corners.min(axis=0)).astype(np.int64)
        hi_i = np.ceil(corners.max(axis=0)).astype(np.int64)
        axes = [np.arange(a, b + 1) for a, b in zip(lo_i, hi_i)]
        grid = np.meshgrid(*axes, indexing="ij")
        sites = np.stack([g.ravel() for g in grid], axis=1)
        return sites[self.btilde_contains(k, z, sites)]

    def covering_anchors(self, k: int, z) -> list:
        """Level-(k-1) anchors whose open core box sits inside b2(k, z)."""
        if k < 1:
            raise ValueError("covering is defined for k >= 1")
        sp = self.spacing(k - 1).astype(np.float64)
        e_small = self.extent(k - 1)
        e = self.extent(k)
        m = self.margins(k)
        z = np.asarray(z, dtype=np.float64)
        ranges = []
        for j in range(self.d):
            # open (y_j, y_j + e_small_j) inside open (z_j - m_j, z_j + e_j + m_j)
            lo = z[j] - m[j]
            hi = z[j] + e[j] + m[j] - e_small[j]
            i0 = int(math.ceil(lo / sp[j]))
            i1 = int(math.floor(hi / sp[j]))
            ranges.append(range(i0, i1 + 1))
        return [tuple(int(i * s) for i, s in zip(idx, sp))
                for idx in product(*ranges)]

    def b2_disjoint(self, k: int, y, t) -> bool:
        """Interval disjointness of b2(k, y) and b2(k, t)."""
        e = self.extent(k)
        m = self.margins(k)
        for j in range(self.d):
            if abs(float(y[j]) - float(t[j])) >= e[j] + 2 * m[j]:
                return True
        return False

    def b2_sites(self, k: int, z) -> np.ndarray:
        spec = self.b2_spec(k, z)
        lo, hi = spec.bounding_range(margin=0)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        sites = np.stack([g.ravel() for g in grid], axis=1)
        return sites[self.b2_contains(k, z, sites)]


def poly_boxes(direction, N0: int, kappa: float, k_max: int,
               preset: RenormPreset = PAPER_PRESET) -> PolyBoxes:
    ladder = build_ladder_poly(N0, kappa, k_max, d=len(direction),
                               multiplier_override=preset.multiplier_override,
                               v=preset.v)
    return PolyBoxes(rotation=make_rotation(direction), ladder=ladder, preset=preset)


def quasi_covering_holds(boxes: PolyBoxes, k: int, z) -> bool:
    """Site-by-site check that the level-(k-1) base boxes cover b2(k, z)."""
    sites = boxes.b2_sites(k, z)
    covered = np.zeros(sites.shape[0], dtype=bool)
    for y in boxes.covering_anchors(k, z):
        covered |= boxes.btilde_contains(k - 1, y, sites)
        if covered.all():
            return True
    return bool(covered.all())


# ---------------------------------------------------------------------------
# classification


@dataclass
class GoodBadMap:
    level: int
    status: dict          # anchor tuple -> bool (True = good)
    witness: dict         # anchor tuple -> witness anchor, level >= 1 good boxes
    threshold: float | None = None
    preset: str = "paper"

    def good(self, z) -> bool:
        return self.status[tuple(int(c) for c in z)]

    def n_bad(self) -> int:
        return sum(1 for v in self.status.values() if not v)


def classify_level0(env: Environment, boxes: PolyBoxes, anchors,
                    threshold_exp: float | None = None) -> GoodBadMap:
    """Quenched level-0 classification by exact solve over all base starts."""
    exp = boxes.preset.good_exp if threshold_exp is None else threshold_exp
    threshold = 1.0 - float(boxes.N(0)) ** (-exp)
    status = {}
    for z in anchors:
        z = tuple(int(c) for c in z)
        spec = boxes.b2_spec(0, z)
        res = exit_distribution_exact(env, spec, _any_interior_start(boxes, 0, z))
        starts = boxes.btilde_sites(0, z)
        idx = [res._index[tuple(int(c) for c in s)] for s in starts]
        inf_frontal = float(res.per_start[idx, 0].min())
        status[z] = inf_frontal > threshold
    return GoodBadMap(level=0, status=status, witness={}, threshold=threshold,
                      preset=boxes.preset.name)


def _any_interior_start(boxes: PolyBoxes, k: int, z):
    starts = boxes.btilde_sites(k, z)
    return tuple(int(c) for c in starts[0])


def classify_recursive(boxes: PolyBoxes, k: int, anchors, lower: GoodBadMap) -> GoodBadMap:
    """Level-k map from the level-(k-1) map, via the one-witness rule.

    A box is good when some witness anchor t exists such that every covered
    level-(k-1) box disjoint from the witness's enlarged box is good.
    """
    if lower.level != k - 1:
        raise ValueError("lower map has the wrong level")
    status = {}
    witness = {}
    for z in anchors:
        z = tuple(int(c) for c in z)
        cov = boxes.covering_anchors(k, z)
        bad = [y for y in cov if not lower.status[y]]
        if not bad:
            status[z] = True
            witness[z] = cov[0]
            continue
        good = False
        for t in cov:
            if all(y == t or not boxes.b2_disjoint(k - 1, y, t) for y in bad):
                good = True
                witness[z] = t
                break
        status[z] = good
    return GoodBadMap(level=k, status=status, witness=witness, preset=boxes.preset.name)


def classify_brute_force(boxes: PolyBoxes, k: int, anchors, lower: GoodBadMap) -> GoodBadMap:
    """Literal evaluation of the defining existential, with explicit site sets.

    Kept deliberately independent of classify_recursive: the quantifiers run
    over all anchors and disjointness is decided on the actual lattice sets.
    """
    status = {}
    witness = {}
    site_cache = {}

    def sites_of(y):
        if y not in site_cache:
            arr = boxes.b2_sites(k - 1, y)
            site_cache[y] = set(map(tuple, arr.tolist()))
        return site_cache[y]

    for z in anchors:
        z = tuple(int(c) for c in z)
        cov = boxes.covering_anchors(k, z)
        good = False
        for t in cov:
            t_sites = sites_of(t)
            ok = True
            for y in cov:
                if y == t:
                    continue
                if sites_of(y).isdisjoint(t_sites) and not lower.status[y]:
                    ok = False
                    break
            if ok:
                good = True
                witness[z] = t
                break
        status[z] = good
    return GoodBadMap(level=k, status=status, witness=witness, preset=boxes.preset.name)


def bad_subbox_count(boxes: PolyBoxes, k: int, z, lower: GoodBadMap) -> int:
    cov = boxes.covering_anchors(k, z)
    return sum(1 for y in cov if not lower.status[y])


def classify_tree(env: Environment, boxes: PolyBoxes, k: int, z,
                  threshold_exp: float | None = None, _memo=None) -> GoodBadMap:
    """Walk-based classification of one level-k box, recursing to level 0."""
    z = tuple(int(c) for c in z)
    if k == 0:
        return classify_level0(env, boxes, [z], threshold_exp=threshold_exp)
    cov = boxes.covering_anchors(k, z)
    lower_status = {}
    lower_witness = {}
    for y in cov:
        sub = classify_tree(env, boxes, k - 1, y, threshold_exp=threshold_exp)
        lower_status[y] = sub.status[y]
        lower_witness.update(sub.witness)
    lower = GoodBadMap(level=k - 1, status=lower_status, witness=lower_witness,
                       preset=boxes.preset.name)
    return classify_recursive(boxes, k, [z], lower)


def classify_boxes(env: Environment, boxes: PolyBoxes, level: int, anchors,
                   threshold_exp: float | None = None) -> GoodBadMap:
    """Classify the given anchors at the given level from walk probabilities."""
    if level == 0:
        return classify_level0(env, boxes, anchors, threshold_exp=threshold_exp)
    status = {}
    witness = {}
    for z in anchors:
        sub = classify_tree(env, boxes, level, z, threshold_exp=threshold_exp)
        z = tuple(int(c) for c in z)
        status[z] = sub.status[z]
        witness.update(sub.witness)
    return GoodBadMap(level=level, status=status, witness=witness,
                      preset=boxes.preset.name)


# ---------------------------------------------------------------------------
# probability estimates over environments


def estimate_bad_probability(spec, boxes: PolyBoxes, level: int, n_env: int,
                             seed: int, j_ref: float | None = None,
                             threshold_exp: float | None = None,
                             confidence: float = 0.99) -> dict:
    """Empirical bad-box probability per level, with a doubling diagnostic."""
    from .environment import generate

    bad_counts = np.zeros(level + 1, dtype=np.int64)
    for i in range(n_env):
        env = generate(spec, rng.derive_key(seed, i))
        for k in range(level + 1):
            m = classify_tree(env, boxes, k, (0,) * boxes.d, threshold_exp=threshold_exp)
            if not m.status[(0,) * boxes.d]:
                bad_counts[k] += 1
    out = {"preset": boxes.preset.name, "n_env": n_env, "levels": {}}
    phat = []
    for k in range(level + 1):
        kk = int(bad_counts[k])
        ci = binomial_ci(kk, n_env, confidence)
        entry = {"bad": kk, "p_hat": kk / n_env, "ci": ci}
        if kk == 0:
            entry["upper_bound"] = rule_of_three(n_env)
        out["levels"][k] = entry
        phat.append(kk / n_env)
    if level >= 1 and phat[0] > 0 and phat[1] > 0:
        out["doubling_ratio"] = math.log(phat[1]) / math.log(phat[0])
    if j_ref is not None:
        d = boxes.d
        out["level0_reference"] = boxes.N(0) ** (-(j_ref - 3 * (d + 1)))
    return out


def quenched_goodbox_bound_check(env: Environment, boxes: PolyBoxes, level: int,
                                 z=None, threshold_exp: float | None = None) -> dict:
    """Exit-probability bound for a box already classified good.

    Reports sup over base-box starts of the quenched non-frontal exit
    probability and the decay rate solving estimate = exp(-eta N_k / v^{k+1});
    descriptive only. Goodness itself thresholds the inf over starts of the
    frontal exit probability, not any single start.
    """
    z = (0,) * boxes.d if z is None else tuple(int(c) for c in z)
    cls = classify_tree(env, boxes, level, z, threshold_exp=threshold_exp)
    if not cls.status[z]:
        raise ValueError(f"box at {z} is not good at level {level}; bound check "
                         "requires a good box")
    spec = boxes.b2_spec(level, z)
    res = exit_distribution_exact(env, spec, _any_interior_start(boxes, level, z))
    starts = boxes.btilde_sites(level, z)
    idx = [res._index[tuple(int(c) for c in s)] for s in starts]
    sup_nonfrontal = float(res.per_start[idx, 1].max())
    nk = boxes.N(level)
    v = boxes.preset.v
    eta = -math.log(max(sup_nonfrontal, 1e-300)) * v ** (level + 1) / nk
    return {"sup_nonfrontal": sup_nonfrontal, "eta_fit": eta, "level": level,
            "N_k": nk, "preset": boxes.preset.name,
            "note": "goodness thresholds the inf over base starts of the frontal "
                    "exit probability; single starts are not individually bounded"}


def phi_chain_report(ladder: ScaleLadderEC, rho_moments: dict, kappa: float,
                     c_proxy: float = 1.0) -> dict:
    """Compare phi_k = c * Lt_{k+1}^{d-1} L_k E[rho_k^{a_k}] with (2k)^{u_k L_k}.

    The dimensional constants in the chain are not numeric; c_proxy stands
    in for them, so this is a report, never a certification. Feasible at
    desk scale only for the levels whose moments were actually measured.
    """
    out = {}
    for k, moment in sorted(rho_moments.items()):
        phi = c_proxy * ladder.Lt[k + 1] ** (ladder.d - 1) * ladder.L[k] * moment
        target = (2 * kappa) ** (ladder.u[k] * ladder.L[k])
        out[k] = {"phi": phi, "target": target, "satisfied": bool(phi <= target)}
    return {"c_proxy": c_proxy, "levels": out,
            "note": "proxy constant; diagnostic only"}
