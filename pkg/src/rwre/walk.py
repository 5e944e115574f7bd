"""Quenched and coupled walk simulation with online stopping times.

The quenched chain steps from the environment's transition vectors; the
coupled chain additionally draws an auxiliary letter per step (each signed
unit move with probability kappa, "no letter" otherwise) and, on "no
letter", steps from the residual kernel (omega(x, e) - kappa)/(1 - 2 d
kappa). Both constructions have the same path law; the coupled one exposes
the letter sequence that regeneration detection needs.

Every simulation carries a horizon; leaving the environment region before
any stop is an error, never a silent boundary.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .environment import Environment
from .geometry import BoxSpec, ConeSpec, Rotation, unit_moves

MODE_QUENCHED = 0
MODE_COUPLED = 1

_CHUNK = 256
_TILE = 64
_RECORD_CAP_BYTES = 1 << 29


class RegionExhaustedError(RuntimeError):
    """Walk reached the environment region edge before any stop."""


class SimulationContractError(ValueError):
    pass


# ---------------------------------------------------------------------------
# stop clauses


@dataclass(frozen=True)
class LevelUp:
    u: tuple
    c: float

    @property
    def name(self):
        return f"level_up({self.u},{self.c})"


@dataclass(frozen=True)
class LevelDown:
    u: tuple
    c: float

    @property
    def name(self):
        return f"level_down({self.u},{self.c})"


@dataclass(frozen=True)
class BoxExit:
    box: BoxSpec

    @property
    def name(self):
        b = self.box
        return f"box_exit(L={b.L},Lf={b.L_front},Lt={b.L_tilde})"


@dataclass(frozen=True)
class ConeExit:
    cone: ConeSpec

    @property
    def name(self):
        return f"cone_exit(zeta={self.cone.zeta})"


@dataclass(frozen=True)
class TransverseExit:
    """Fires when |(x - anchor) . R(e_j)| >= u for some transverse axis j."""

    rotation: Rotation = field(compare=False)
    u: float = 0.0
    anchor: tuple = (0, 0)

    @property
    def name(self):
        return f"transverse(|.|>={self.u})"


@dataclass(frozen=True)
class StopSpec:
    """First-of composition of stop clauses; the horizon is always present."""

    clauses: tuple
    horizon: int

    def __post_init__(self):
        if self.horizon < 0:
            raise SimulationContractError("horizon must be >= 0")

    @classmethod
    def first_of(cls, *clauses, horizon: int) -> "StopSpec":
        return cls(clauses=tuple(clauses), horizon=int(horizon))

    def names(self):
        return [c.name for c in self.clauses]

    def pack(self, d: int):
        k = len(self.clauses)
        kinds = np.zeros(k, dtype=np.int32)
        vecs = np.zeros((k, d, d), dtype=np.float64)
        ref = np.zeros((k, d), dtype=np.float64)
        lo = np.zeros((k, d), dtype=np.float64)
        hi = np.zeros((k, d), dtype=np.float64)
        c1 = np.zeros(k, dtype=np.float64)
        c2 = np.zeros(k, dtype=np.float64)
        for i, cl in enumerate(self.clauses):
            if isinstance(cl, LevelUp) or isinstance(cl, LevelDown):
                kinds[i] = kernels.K_LEVEL
                vecs[i, 0] = np.asarray(cl.u, dtype=np.float64)
                c1[i] = cl.c
                c2[i] = 1.0 if isinstance(cl, LevelUp) else -1.0
            elif isinstance(cl, BoxExit):
                kinds[i] = kernels.K_BOX
                b = cl.box
                vecs[i] = b.rotation.matrix.T
                ref[i] = np.asarray(b.anchor, dtype=np.float64)
                lo[i, 0] = -b.L
                hi[i, 0] = b.L_front
                lo[i, 1:] = -b.L_tilde
                hi[i, 1:] = b.L_tilde
            elif isinstance(cl, ConeExit):
                kinds[i] = kernels.K_CONE
                c = cl.cone
                vecs[i, 0] = c.l.as_array()
                ref[i] = np.asarray(c.apex, dtype=np.float64)
                c1[i] = c.zeta * c.l.h
            elif isinstance(cl, TransverseExit):
                kinds[i] = kernels.K_TRANSVERSE
                vecs[i, : d - 1] = cl.rotation.matrix[:, 1:].T
                ref[i] = np.asarray(cl.anchor, dtype=np.float64)
                c1[i] = cl.u
            else:
                raise SimulationContractError(f"unknown stop clause {cl!r}")
        return kinds, vecs, ref, lo, hi, c1, c2


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    start: tuple
    moves: np.ndarray  # u8 codes into unit_moves(d)
    stop_name: str     # clause name, "horizon" or "region"
    stop_index: int

    @property
    def d(self):
        return len(self.start)

    @property
    def truncated(self):
        return self.stop_name == "horizon"

    def positions(self) -> np.ndarray:
        """All visited sites including the start, shape (n_steps + 1, d)."""
        mv = unit_moves(self.d)[self.moves.astype(np.int64)]
        out = np.concatenate([np.zeros((1, self.d), dtype=np.int64), np.cumsum(mv, axis=0)])
        return out + np.asarray(self.start, dtype=np.int64)


@dataclass
class EpsilonSequence:
    """Auxiliary letters per step; code 2d means 'no letter'."""

    codes: np.ndarray
    kappa: float
    d: int

    def frequencies(self):
        n = max(len(self.codes), 1)
        counts = np.bincount(self.codes, minlength=2 * self.d + 1)[: 2 * self.d + 1]
        return counts / n


@dataclass
class BatchResult:
    start: tuple
    stop: StopSpec
    status: np.ndarray
    n_steps: np.ndarray
    final: np.ndarray
    draws: np.ndarray
    moves: np.ndarray | None
    eps: np.ndarray | None
    checkpoints: np.ndarray | None
    checkpoint_steps: np.ndarray | None
    kappa: float
    d: int

    def stop_name(self, i: int) -> str:
        s = int(self.status[i])
        if s >= 0:
            return self.stop.clauses[s].name
        return "horizon" if s == kernels.ST_HORIZON else "region"

    def fired_counts(self) -> dict:
        out = {}
        for i in range(len(self.status)):
            out[self.stop_name(i)] = out.get(self.stop_name(i), 0) + 1
        return out

    def trajectory(self, i: int) -> Trajectory:
        if self.moves is None:
            raise SimulationContractError("batch was run without recording")
        n = int(self.n_steps[i])
        return Trajectory(self.start, self.moves[i, :n].copy(),
                          self.stop_name(i), n)

    def epsilons(self, i: int) -> EpsilonSequence:
        if self.eps is None:
            raise SimulationContractError("epsilon sequence requires coupled mode with recording")
        n = int(self.n_steps[i])
        return EpsilonSequence(self.eps[i, :n].copy(), self.kappa, self.d)


# ---------------------------------------------------------------------------
# window management


class _WindowCache:
    """Materializes cumulative-probability windows, tile-aligned, cached."""

    def __init__(self, env: Environment, tile: int = _TILE):
        self.env = env
        self.tile = tile
        self._tiles = {}

    def everything(self):
        # sentinel: win_shape[0] == 0 means one shared row for all sites
        cum = self.env.cum_block(self.env.region.lo, self.env.region.lo) \
            if self.env.is_constant else None
        lo = np.zeros(self.env.d, dtype=np.int64)
        shape = np.zeros(self.env.d, dtype=np.int64)
        return cum, lo, shape

    def block(self, lo, hi):
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        rl = np.asarray(self.env.region.lo, dtype=np.int64)
        rh = np.asarray(self.env.region.hi, dtype=np.int64)
        lo = np.maximum(lo, rl)
        hi = np.minimum(hi, rh)
        cum = self.env.cum_block(lo, hi)
        return cum, lo, (hi - lo + 1).astype(np.int64)

    def tile_for(self, pos):
        anchor = tuple(int(np.floor_divide(int(p), self.tile)) for p in pos)
        hit = self._tiles.get(anchor)
        if hit is None:
            lo = np.array([a * self.tile for a in anchor], dtype=np.int64)
            hi = lo + self.tile - 1
            hit = self.block(lo, hi)
            self._tiles[anchor] = hit
        return hit


def _everything_mode_ok(env: Environment) -> bool:
    return env.is_constant


def _window_sentinel_guard(cum, win_shape):
    # the kernels treat win_shape[0] == 0 as "row 0 everywhere"
    if win_shape[0] == 0 and cum.shape[0] != 1:
        raise SimulationContractError("everything-mode window needs a single row")


# ---------------------------------------------------------------------------
# batch simulation


def _default_window(env: Environment, x0, stop: StopSpec, cache: _WindowCache):
    if env.is_constant:
        return cache.everything()
    for cl in stop.clauses:
        if isinstance(cl, BoxExit):
            lo, hi = cl.box.bounding_range(margin=2)
            return cache.block(lo, hi)
    return cache.tile_for(x0)


def _validate(env: Environment, x0, stop: StopSpec):
    if not env.region.contains(x0):
        raise SimulationContractError(f"start {x0} outside environment region")
    for cl in stop.clauses:
        if isinstance(cl, BoxExit):
            lo, hi = cl.box.bounding_range(margin=1)
            if not (env.region.contains(lo) and env.region.contains(hi)):
                raise SimulationContractError(
                    "environment region too small for the box stop; enlarge it")


def simulate_batch(env: Environment, x0, stop: StopSpec, seed: int, n: int,
                   mode: int = MODE_QUENCHED, record: bool = False,
                   checkpoints=None, threads: int = 1,
                   window=None, index0: int = 0,
                   on_region_exhausted: str = "raise") -> BatchResult:
    """Simulate n trajectories on per-index counter streams.

    Trajectory i uses the stream derived from (seed, index0 + i), so the
    result is independent of chunking, thread count and call order.
    """
    _validate(env, x0, stop)
    d = env.d
    x0 = np.asarray(x0, dtype=np.int64)
    # short walks in lazily evaluated environments waste less on small tiles
    tile = _TILE if stop.horizon > 1024 else 16
    cache = _WindowCache(env, tile=tile)
    if window is not None:
        cum, win_lo, win_shape = cache.block(*window)
    else:
        cum, win_lo, win_shape = _default_window(env, x0, stop, cache)
    _window_sentinel_guard(cum, win_shape)

    kinds, vecs, ref, lo, hi, c1, c2 = stop.pack(d)
    horizon = stop.horizon
    if record and n * max(horizon, 1) > _RECORD_CAP_BYTES:
        raise SimulationContractError("recording this batch would exceed the memory cap")

    moves = np.zeros((n, horizon if record else 0), dtype=np.uint8)
    eps = np.zeros((n, horizon if (record and mode == MODE_COUPLED) else 0), dtype=np.uint8)
    if checkpoints is None:
        ckpts = np.zeros(0, dtype=np.int64)
    else:
        ckpts = np.asarray(sorted({int(c) for c in checkpoints}), dtype=np.int64)
    ckpt_out = np.zeros((n, len(ckpts), d), dtype=np.int64)
    status = np.zeros(n, dtype=np.int32)
    n_steps = np.zeros(n, dtype=np.int64)
    final = np.zeros((n, d), dtype=np.int64)
    draws = np.zeros(n, dtype=np.int64)

    region_lo = np.asarray(env.region.lo, dtype=np.int64)
    region_hi = np.asarray(env.region.hi, dtype=np.int64)
    master = int(seed) & 0xFFFFFFFFFFFFFFFF

    def run_chunk(c0: int):
        c1_ = min(c0 + _CHUNK, n)
        kernels.run_batch(cum, win_lo, win_shape, region_lo, region_hi,
                          x0, master, index0 + c0, c1_ - c0, horizon,
                          mode, env.kappa,
                          kinds, vecs, ref, lo, hi, c1, c2,
                          moves[c0:c1_], eps[c0:c1_], ckpts, ckpt_out[c0:c1_],
                          status[c0:c1_], n_steps[c0:c1_], final[c0:c1_],
                          draws[c0:c1_])

    starts = list(range(0, n, _CHUNK))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run_chunk, starts))
    else:
        for c0 in starts:
            run_chunk(c0)

    # trajectories that left the window continue tile by tile
    pending = np.nonzero(status == kernels.ST_WINDOW)[0]
    for i in pending:
        pos = final[i].copy()
        # checkpoints at steps <= n were already recorded before the pause
        cp = int(np.searchsorted(ckpts, n_steps[i], side="right"))
        state = np.array([n_steps[i], int(draws[i]), cp], dtype=np.int64)
        key = rng.derive_key(master, index0 + int(i))
        st = kernels.ST_WINDOW
        while st == kernels.ST_WINDOW:
            tcum, tlo, tshape = cache.tile_for(pos)
            st = kernels.resume_one(tcum, tlo, tshape, region_lo, region_hi,
                                    pos, key, state, horizon, mode, env.kappa,
                                    kinds, vecs, ref, lo, hi, c1, c2,
                                    moves[i] if record else moves[i, :0],
                                    eps[i] if (record and mode == MODE_COUPLED) else eps[i, :0],
                                    ckpts, ckpt_out[i])
        status[i] = st
        n_steps[i] = state[0]
        draws[i] = state[1]
        final[i] = pos

    if np.any(status == kernels.ST_REGION):
        bad = int((status == kernels.ST_REGION).sum())
        if on_region_exhausted == "raise":
            raise RegionExhaustedError(
                f"{bad}/{n} walks reached the region edge before any stop; enlarge the region")

    return BatchResult(start=tuple(int(v) for v in x0), stop=stop, status=status,
                       n_steps=n_steps, final=final, draws=draws,
                       moves=moves if record else None,
                       eps=eps if (record and mode == MODE_COUPLED) else None,
                       checkpoints=ckpt_out if len(ckpts) else None,
                       checkpoint_steps=ckpts if len(ckpts) else None,
                       kappa=env.kappa, d=d)


def simulate_quenched(env: Environment, x0, stop: StopSpec, seed: int,
                      index: int = 0) -> Trajectory:
    """One quenched trajectory; ends at the first triggered stop."""
    res = simulate_batch(env, x0, stop, seed, 1, mode=MODE_QUENCHED,
                         record=True, index0=index)
    return res.trajectory(0)


def simulate_coupled(env: Environment, x0, stop: StopSpec, seed: int,
                     index: int = 0):
    """One coupled trajectory plus its auxiliary letter sequence."""
    res = simulate_batch(env, x0, stop, seed, 1, mode=MODE_COUPLED,
                         record=True, index0=index)
    return res.trajectory(0), res.epsilons(0)


# ---------------------------------------------------------------------------
# offline stop evaluation


def evaluate_stops(traj: Trajectory, specs) -> list:
    """First hit index of each spec on a stored path; None when not hit.

    Agrees with the online annotations whenever both are computed.
    """
    pos = traj.positions().astype(np.float64)
    out = []
    for spec in specs:
        best = None
        best_name = None
        for cl in spec.clauses:
            idx = _first_hit(cl, pos)
            if idx is not None and (best is None or idx < best):
                best, best_name = idx, cl.name
        if spec.horizon < len(pos) and (best is None or spec.horizon < best):
            best, best_name = spec.horizon, "horizon"
        out.append(None if best is None else (best_name, int(best)))
    return out


def _first_hit(cl, pos: np.ndarray):
    if isinstance(cl, LevelUp):
        mask = pos @ np.asarray(cl.u, dtype=np.float64) >= cl.c
    elif isinstance(cl, LevelDown):
        mask = pos @ np.asarray(cl.u, dtype=np.float64) <= cl.c
    elif isinstance(cl, BoxExit):
        mask = ~cl.box.contains(pos)
    elif isinstance(cl, ConeExit):
        from .geometry import cone_contains_many
        mask = ~cone_contains_many(cl.cone, pos)
    elif isinstance(cl, TransverseExit):
        c = (pos - np.asarray(cl.anchor, dtype=np.float64)) @ cl.rotation.matrix[:, 1:]
        mask = (np.abs(c) >= cl.u).any(axis=1)
    else:
        raise SimulationContractError(f"unknown stop clause {cl!r}")
    hits = np.nonzero(mask)[0]
    return None if hits.size == 0 else int(hits[0])
