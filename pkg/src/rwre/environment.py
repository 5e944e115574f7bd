"""Uniformly elliptic random environments on Z^d.

An environment assigns to every site a nearest-neighbour transition vector
with all entries >= 2*kappa. Three generators are provided:

* ``iid``: independent affinely rescaled Dirichlet draws, evaluated lazily
  from site-hashed counter streams so huge regions need no storage;
* ``gibbs``: a materialized finite-range field with exponentially decaying
  pair coupling, swept by prior-proposal Metropolis-within-Gibbs updates
  (a heuristic model of strong mixing, not a certification of it);
* ``constant``: the same transition vector everywhere.

Entry order is the fixed move order (+e1, -e1, +e2, -e2, ...).
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import rng
from .geometry import unit_moves

SNAPSHOT_MAGIC = b"RWRE"
SNAPSHOT_VERSION = 1
MATERIALIZE_CAP = 4_000_000

PROB_SUM_TOL = 1e-12


class EnvironmentError_(ValueError):
    pass


class CapacityError(EnvironmentError_):
    pass


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    """Axis-aligned lattice box, bounds inclusive."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"bad region bounds {self.lo}..{self.hi}")

    @classmethod
    def cube(cls, d: int, radius: int) -> "Region":
        return cls(tuple([-radius] * d), tuple([radius] * d))

    @property
    def d(self) -> int:
        return len(self.lo)

    def size(self) -> int:
        n = 1
        for a, b in zip(self.lo, self.hi):
            n *= b - a + 1
        return n

    def contains(self, site) -> bool:
        return all(a <= int(x) <= b for x, a, b in zip(site, self.lo, self.hi))

    def sites(self) -> np.ndarray:
        """All sites in lexicographic order, shape (size, d)."""
        axes = [np.arange(a, b + 1, dtype=np.int64) for a, b in zip(self.lo, self.hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1)


@dataclass(frozen=True)
class MixingParams:
    C: float
    g: float
    r: int

    def __post_init__(self):
        if self.C < 0 or self.g <= 0 or self.r < 1:
            raise ValueError("need C >= 0, g > 0, r >= 1")


def validate_transition_vector(p: np.ndarray, kappa: float, d: int) -> None:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (2 * d,):
        raise EnvironmentError_(f"transition vector must have {2*d} entries")
    if abs(float(p.sum()) - 1.0) > PROB_SUM_TOL:
        raise EnvironmentError_(f"entries sum to {p.sum()!r}, not 1")
    if float(p.min()) < 2 * kappa - 1e-12:
        raise EnvironmentError_(f"entry {p.min()!r} below ellipticity floor {2*kappa}")


def _check_kappa(kappa: float, d: int) -> None:
    if not 0 < kappa < 1.0 / (4 * d):
        raise EnvironmentError_(f"kappa must lie in (0, 1/(4d)) = (0, {1/(4*d)}); got {kappa}")


# ---------------------------------------------------------------------------
# counter-stream gamma / Dirichlet sampling

_BOOST_SLOT = 1 << 40


def _gamma_from_keys(keys: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """One Gamma(alpha) draw per stream key (Marsaglia-Tsang, shape-boosted).

    Rejection rounds consume fixed counter slots of each lane's stream, so
    the draw is a pure function of (key, alpha).
    """
    keys = np.asarray(keys, dtype=np.uint64)
    a = np.broadcast_to(np.asarray(alpha, dtype=np.float64), keys.shape).copy()
    if np.any(a <= 0):
        raise ValueError("gamma shape must be positive")
    boost = a < 1.0
    shape = np.where(boost, a + 1.0, a)
    dpar = shape - 1.0 / 3.0
    cpar = 1.0 / np.sqrt(9.0 * dpar)

    out = np.empty(keys.shape, dtype=np.float64)
    pending = np.arange(keys.size)
    t = 0
    while pending.size and t < 256:
        k = keys[pending]
        u = rng.uniform_block(k, 3 * t, 3)
        x = np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        v = (1.0 + cpar[pending] * x) ** 3
        pos = v > 0
        dd = dpar[pending]
        logv = np.log(np.where(pos, v, 1.0))
        accept = pos & (np.log(np.maximum(u[:, 2], 1e-300))
                        < 0.5 * x * x + dd - dd * v + dd * logv)
        out[pending[accept]] = (dd * v)[accept]
        pending = pending[~accept]
        t += 1
    if pending.size:
        raise RuntimeError("gamma rejection failed to terminate")
    if boost.any():
        ub = rng.uniform_block(keys[boost], _BOOST_SLOT, 1)[:, 0]
        out[boost] *= np.maximum(ub, 1e-300) ** (1.0 / a[boost])
    return out


def _dirichlet_from_site_keys(site_keys: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """One Dirichlet(alpha) draw per site key; returns (n, len(alpha))."""
    m = alpha.shape[0]
    with np.errstate(over="ignore"):
        lane = rng.mix64_array(site_keys[:, None]
                               + (np.arange(1, m + 1, dtype=np.uint64) * np.uint64(rng.GAMMA))[None, :])
    g = _gamma_from_keys(lane.ravel(), np.tile(alpha, site_keys.shape[0])).reshape(-1, m)
    return g / g.sum(axis=1, keepdims=True)


def simplex_points_for_sites(seed: int, sites: np.ndarray, kappa: float, d: int,
                             alpha: np.ndarray) -> np.ndarray:
    keys = rng.site_keys(seed, sites)
    y = _dirichlet_from_site_keys(keys, alpha)
    return 2.0 * kappa + (1.0 - 4.0 * d * kappa) * y


def sample_simplex_point(kappa: float, d: int, stream: rng.CounterStream,
                         alpha=None) -> np.ndarray:
    """One point of the 2*kappa-elliptic simplex: 2k*1 + (1-4dk)*Dirichlet(alpha)."""
    _check_kappa(kappa, d)
    a = _resolve_alpha(alpha, d)
    key = rng.derive_key(stream.key, stream.counter)
    stream.counter += 1
    y = _dirichlet_from_site_keys(np.array([key], dtype=np.uint64), a)[0]
    return 2.0 * kappa + (1.0 - 4.0 * d * kappa) * y


def _resolve_alpha(alpha, d: int) -> np.ndarray:
    if alpha is None:
        return np.ones(2 * d, dtype=np.float64)
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim == 0:
        a = np.full(2 * d, float(a))
    if a.shape != (2 * d,) or np.any(a <= 0):
        raise EnvironmentError_(f"alpha must be {2*d} positive shapes")
    return a


# ---------------------------------------------------------------------------


class Environment:
    """Transition vectors over a lattice region; immutable once built."""

    def __init__(self, kind: str, d: int, kappa: float, region: Region,
                 seed: int = 0, alpha=None, grid: np.ndarray | None = None,
                 const: np.ndarray | None = None, source: dict | None = None):
        _check_kappa(kappa, d)
        if region.d != d:
            raise EnvironmentError_("region dimension mismatch")
        self.kind = kind
        self.d = d
        self.kappa = kappa
        self.region = region
        self.seed = seed
        self.alpha = _resolve_alpha(alpha, d)
        self._grid = grid            # shape region_shape + (2d,) for materialized kinds
        self._const = const
        self.source = source or {"kind": kind}

    # -- queries ----------------------------------------------------------

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    @property
    def constant_vector(self) -> np.ndarray | None:
        return None if self._const is None else self._const.copy()

    def _clip_block(self, lo, hi):
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        rl = np.asarray(self.region.lo, dtype=np.int64)
        rh = np.asarray(self.region.hi, dtype=np.int64)
        if np.any(lo < rl) or np.any(hi > rh):
            raise EnvironmentError_(f"block {lo}..{hi} leaves region {self.region}")
        return lo, hi

    def vectors_block(self, lo, hi) -> np.ndarray:
        """Transition vectors for the inclusive block lo..hi, shape (*dims, 2d)."""
        lo, hi = self._clip_block(lo, hi)
        shape = tuple(int(b - a + 1) for a, b in zip(lo, hi))
        if self._const is not None:
            return np.broadcast_to(self._const, shape + (2 * self.d,)).copy()
        if self._grid is not None:
            idx = tuple(slice(int(a - r), int(b - r + 1))
                        for a, b, r in zip(lo, hi, self.region.lo))
            return self._grid[idx].copy()
        sites = Region(tuple(int(x) for x in lo), tuple(int(x) for x in hi)).sites()
        p = simplex_points_for_sites(self.seed, sites, self.kappa, self.d, self.alpha)
        return p.reshape(shape + (2 * self.d,))

    def vector_at(self, site) -> np.ndarray:
        site = tuple(int(x) for x in site)
        return self.vectors_block(site, site).reshape(2 * self.d)

    def cum_block(self, lo, hi) -> np.ndarray:
        """Row-major cumulative transition probabilities, shape (n_sites, 2d)."""
        p = self.vectors_block(lo, hi).reshape(-1, 2 * self.d)
        return np.cumsum(p, axis=1)

    def mean_step(self, site) -> np.ndarray:
        p = self.vector_at(site)
        return p @ unit_moves(self.d).astype(np.float64)


def generate_iid(kappa: float, d: int, region: Region | None, seed: int, alpha=None) -> Environment:
    if region is None:
        region = Region.cube(d, 1 << 40)
    if region.size() <= 0:
        raise EnvironmentError_("region is empty")
    a = _resolve_alpha(alpha, d)
    src = {"kind": "iid", "seed": int(seed), "kappa": kappa, "d": d,
           "alpha": [float(x) for x in a]}
    return Environment("iid", d, kappa, region, seed=seed, alpha=a, source=src)


def constant_env(probs, kappa: float | None = None, region: Region | None = None) -> Environment:
    p = np.asarray(probs, dtype=np.float64)
    d = p.shape[0] // 2
    if kappa is None:
        # strictly inside (0, 1/(4d)) even for the centered vector
        kappa = min(float(p.min()) / 2.0, 0.9 / (4.0 * d))
    if region is None:
        region = Region.cube(d, 1 << 40)
    validate_transition_vector(p, kappa, d)
    src = {"kind": "constant", "probs": [float(x) for x in p], "kappa": kappa, "d": d}
    return Environment("constant", d, kappa, region, const=p.copy(), source=src)


# ---------------------------------------------------------------------------
# Gibbs-type generator


def _clr(p: np.ndarray) -> np.ndarray:
    lp = np.log(p)
    return lp - lp.mean(axis=-1, keepdims=True)


def _ball_offsets(d: int, r: int) -> list:
    """Nonzero integer offsets with |v|_1 <= r."""
    out = []
    rng_ = range(-r, r + 1)
    import itertools
    for v in itertools.product(rng_, repeat=d):
        if v != (0,) * d and sum(abs(c) for c in v) <= r:
            out.append(v)
    return out


def generate_gibbs(kappa: float, d: int, region: Region, mixing: MixingParams,
                   seed: int, sweeps: int, alpha=None, clamp=None) -> Environment:
    """Finite-range coupled field on the elliptic simplex, materialized.

    Site states start from the iid generator and are swept in lexicographic
    order; each update proposes a fresh iid draw and accepts it by the
    Metropolis rule for the pair energy

        E = sum_{|x-y|_1 <= r} C e^{-g|x-y|_1} |clr(p_x) - clr(p_y)|^2 / 2.

    The site conditional is not a named distribution, so the sweep uses
    prior proposals rather than direct conditional draws; with C = 0 every
    proposal is accepted and the field coincides with the iid one in law.
    ``clamp`` maps sites to fixed transition vectors that are never updated.
    """
    if sweeps < 1:
        raise EnvironmentError_("need sweeps >= 1")
    _check_kappa(kappa, d)
    if region.size() > MATERIALIZE_CAP:
        raise CapacityError(f"region has {region.size()} sites; cap is {MATERIALIZE_CAP}")
    a = _resolve_alpha(alpha, d)
    shape = tuple(b - x + 1 for x, b in zip(region.lo, region.hi))

    sites = region.sites()
    grid = simplex_points_for_sites(seed, sites, kappa, d, a).reshape(shape + (2 * d,))
    lo = np.asarray(region.lo, dtype=np.int64)

    clamp_idx = {}
    if clamp:
        for s, vec in clamp.items():
            v = np.asarray(vec, dtype=np.float64)
            validate_transition_vector(v, kappa, d)
            idx = tuple(int(c) - int(o) for c, o in zip(s, lo))
            grid[idx] = v
            clamp_idx[idx] = True

    offsets = _ball_offsets(d, mixing.r)
    weights = [mixing.C * math.exp(-mixing.g * sum(abs(c) for c in off)) for off in offsets]

    prop_seed = rng.derive_key(seed, 0xA1)
    acc_seed = rng.derive_key(seed, 0xA2)
    n_sites = sites.shape[0]
    site_index = {tuple(int(c) for c in s): i for i, s in enumerate(sites)}

    for sweep in range(sweeps):
        sweep_key = rng.derive_key(prop_seed, sweep)
        props = simplex_points_for_sites(sweep_key, sites, kappa, d, a)
        acc_u = rng.uniform_block(
            np.array([rng.derive_key(acc_seed, sweep)], dtype=np.uint64), 0, n_sites)[0]
        for i in range(n_sites):
            s = sites[i]
            idx = tuple(int(c) - int(o) for c, o in zip(s, lo))
            if idx in clamp_idx:
                continue
            z_old = _clr(grid[idx])
            z_new = _clr(props[i])
            delta = 0.0
            for off, w in zip(offsets, weights):
                nb = tuple(int(c) + o for c, o in zip(s, off))
                j = site_index.get(nb)
                if j is None:
                    continue
                z_nb = _clr(grid[tuple(int(c) - int(o) for c, o in zip(nb, lo))])
                delta += w * 0.5 * (np.sum((z_new - z_nb) ** 2) - np.sum((z_old - z_nb) ** 2))
            if delta <= 0 or acc_u[i] < math.exp(-delta):
                grid[idx] = props[i]

    src = {"kind": "gibbs", "seed": int(seed), "kappa": kappa, "d": d,
           "alpha": [float(x) for x in a], "C": mixing.C, "g": mixing.g,
           "r": mixing.r, "sweeps": sweeps}
    return Environment("gibbs", d, kappa, region, seed=seed, alpha=a, grid=grid, source=src)


def generate(spec, seed: int, clamp=None) -> Environment:
    """Build an environment from an EnvironmentSpec."""
    if spec.kind == "iid":
        return generate_iid(spec.kappa, spec.d, spec.region, seed, alpha=spec.alpha)
    if spec.kind == "gibbs":
        return generate_gibbs(spec.kappa, spec.d, spec.region, spec.mixing, seed,
                              spec.sweeps, alpha=spec.alpha, clamp=clamp)
    if spec.kind == "constant":
        return constant_env(spec.probs, kappa=spec.kappa, region=spec.region)
    raise EnvironmentError_(f"unknown environment kind {spec.kind!r}")


@dataclass(frozen=True)
class EnvironmentSpec:
    """Declarative environment description, shared by ops and the CLI."""

    kind: str
    d: int
    kappa: float
    alpha: tuple | None = None
    probs: tuple | None = None
    region: Region | None = None
    mixing: MixingParams | None = None
    sweeps: int = 0

    def describe(self) -> dict:
        out = {"kind": self.kind, "d": self.d, "kappa": self.kappa}
        if self.alpha is not None:
            out["alpha"] = list(self.alpha)
        if self.probs is not None:
            out["probs"] = list(self.probs)
        if self.region is not None:
            out["region"] = [list(self.region.lo), list(self.region.hi)]
        if self.mixing is not None:
            out["mixing"] = {"C": self.mixing.C, "g": self.mixing.g, "r": self.mixing.r}
        if self.sweeps:
            out["sweeps"] = self.sweeps
        return out


def ensemble(spec: EnvironmentSpec, n: int, seed: int) -> list:
    """n independent environments with per-replica derived seeds."""
    return [generate(spec, rng.derive_key(seed, i)) for i in range(n)]


# ---------------------------------------------------------------------------
# snapshot I/O


def save_snapshot(env: Environment, path: str) -> None:
    """Materialize the environment over its region and write it out.

    Layout: magic, version u32, d u32, kappa f64, region bounds 2d x i64,
    length-prefixed JSON source block, then row-major (lexicographic site
    order) 2d x f64 transition entries.
    """
    n = env.region.size()
    if n > MATERIALIZE_CAP:
        raise CapacityError(f"snapshot would materialize {n} sites; cap is {MATERIALIZE_CAP}")
    buf = io.BytesIO()
    buf.write(SNAPSHOT_MAGIC)
    buf.write(struct.pack("<II", SNAPSHOT_VERSION, env.d))
    buf.write(struct.pack("<d", env.kappa))
    for a in env.region.lo:
        buf.write(struct.pack("<q", a))
    for b in env.region.hi:
        buf.write(struct.pack("<q", b))
    src = json.dumps(env.source, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(src)))
    buf.write(src)
    block = env.vectors_block(env.region.lo, env.region.hi).reshape(-1, 2 * env.d)
    buf.write(block.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_snapshot(path: str) -> Environment:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise EnvironmentError_(f"{path}: not an environment snapshot")
    off = 4
    version, d = struct.unpack_from("<II", raw, off)
    off += 8
    if version != SNAPSHOT_VERSION:
        raise EnvironmentError_(f"unsupported snapshot version {version}")
    (kappa,) = struct.unpack_from("<d", raw, off)
    off += 8
    lo = struct.unpack_from(f"<{d}q", raw, off)
    off += 8 * d
    hi = struct.unpack_from(f"<{d}q", raw, off)
    off += 8 * d
    (slen,) = struct.unpack_from("<I", raw, off)
    off += 4
    source = json.loads(raw[off:off + slen].decode())
    off += slen
    region = Region(lo, hi)
    shape = tuple(b - a + 1 for a, b in zip(lo, hi))
    n = region.size()
    grid = np.frombuffer(raw, dtype="<f8", count=n * 2 * d, offset=off)
    grid = grid.reshape(shape + (2 * d,)).copy()
    flat = grid.reshape(-1, 2 * d)
    if np.any(np.abs(flat.sum(axis=1) - 1.0) > PROB_SUM_TOL) or np.any(flat.min(axis=1) < 2 * kappa - 1e-12):
        raise EnvironmentError_(f"{path}: snapshot fails transition-vector validation")
    return Environment("explicit", d, kappa, region, grid=grid, source=source)


# ---------------------------------------------------------------------------
# mixing diagnostic


def _drift_corner_vectors(kappa: float, d: int):
    scale = 1.0 - 4 * d * kappa
    fwd = np.full(2 * d, 2 * kappa)
    fwd[0] += scale
    bwd = np.full(2 * d, 2 * kappa)
    bwd[1] += scale
    return fwd, bwd


def mixing_ratio_diagnostic(spec: EnvironmentSpec, delta_sites, a_sites,
                            mixing: MixingParams, n_env: int = 100, seed: int = 0,
                            confidence: float = 0.99, bootstrap: int = 200) -> dict:
    """Density-ratio proxy for the exponential mixing bound.

    Compares kernel-smoothed densities of a scalar probe of (omega_x)_{x in
    Delta} between two paired ensembles whose boundary values on A are
    clamped to opposite extreme configurations, against the bound
    exp(C sum e^{-g|x-y|_1}). Statistical report only, never a certificate.
    """
    from scipy.stats import gaussian_kde

    delta = [tuple(int(c) for c in s) for s in delta_sites]
    a_set = [tuple(int(c) for c in s) for s in a_sites]
    if delta and a_set:
        d1 = min(sum(abs(x - y) for x, y in zip(s, t)) for s in delta for t in a_set)
        if d1 < mixing.r:
            raise GeometryError(f"d_1(Delta, A) = {d1} < r = {mixing.r}")

    total = 0.0
    for s in delta:
        for t in a_set:
            total += math.exp(-mixing.g * sum(abs(x - y) for x, y in zip(s, t)))
    bound = math.exp(mixing.C * total)

    fwd, bwd = _drift_corner_vectors(spec.kappa, spec.d)
    clamp_a = {s: fwd for s in a_set}
    clamp_b = {s: bwd for s in a_set}

    def probe(env):
        return float(np.mean([env.vector_at(s)[0] for s in delta]))

    s_a = np.empty(n_env)
    s_b = np.empty(n_env)
    for i in range(n_env):
        env_seed = rng.derive_key(seed, i)
        s_a[i] = probe(generate(spec, env_seed, clamp=clamp_a if a_set else None))
        s_b[i] = probe(generate(spec, env_seed, clamp=clamp_b if a_set else None))

    def sup_ratio(xa, xb):
        if np.allclose(xa, xb):
            return 1.0
        pooled = np.concatenate([xa, xb])
        grid = np.linspace(np.quantile(pooled, 0.05), np.quantile(pooled, 0.95), 64)
        ka = gaussian_kde(xa)(grid)
        kb = gaussian_kde(xb)(grid)
        floor = 0.05 * max(ka.max(), kb.max())
        ok = (ka > floor) & (kb > floor)
        if not ok.any():
            return float("nan")
        return float(max((ka[ok] / kb[ok]).max(), (kb[ok] / ka[ok]).max()))

    est = sup_ratio(s_a, s_b)
    boot = np.empty(bootstrap)
    bkeys = rng.CounterStream(rng.derive_key(seed, 0xB007))
    for b in range(bootstrap):
        idx = (bkeys.uniforms(n_env) * n_env).astype(np.int64)
        boot[b] = sup_ratio(s_a[idx], s_b[idx])
    boot = boot[np.isfinite(boot)]
    alpha = 1.0 - confidence
    ci = (float(np.quantile(boot, alpha / 2)), float(np.quantile(boot, 1 - alpha / 2))) \
        if boot.size else (float("nan"), float("nan"))

    if n_env < 30 or not np.isfinite(est):
        verdict = "inconclusive"
    elif ci[1] <= bound:
        verdict = "holds"
    elif ci[0] > bound:
        verdict = "fails"
    else:
        verdict = "inconclusive"
    return {"ratio": est, "ci": ci, "bound": bound, "n_env": n_env,
            "verdict": verdict, "confidence": confidence, "probe": "mean omega(x, +e1) over Delta"}
