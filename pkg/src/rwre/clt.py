"""Velocity, transverse fluctuations and diffusive-scaling checks.

The centering velocity in every rescaled statistic is the estimated one;
reports carry the plug-in's confidence interval so downstream tolerances
can account for it. All normality and scaling statements are
finite-sample tests, not convergence claims.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from . import rng
from .environment import Environment, EnvironmentSpec, generate
from .geometry import DirectionSpec, make_rotation
from .oracle import solve_absorption
from .regen import transition_scale
from .stats import binomial_ci, bootstrap_ci, mean_ci, rule_of_three
from .walk import StopSpec, simulate_batch


@dataclass
class VelocityEstimate:
    v_hat: np.ndarray
    ci: list                     # per-coordinate (lo, hi)
    v_hat_L: np.ndarray | None   # unit mean regeneration displacement
    method: str
    n: int

    def ballistic_along(self, ell) -> bool:
        return float(self.v_hat @ np.asarray(ell, dtype=np.float64)) > 0


def velocity_plugin(env: Environment, horizon: int, n_traj: int, seed: int,
                    threads: int = 1, confidence: float = 0.99) -> VelocityEstimate:
    """Plug-in estimator X_H / H over independent long trajectories."""
    if n_traj < 100:
        raise ValueError("plug-in velocity needs at least 100 trajectories")
    out = simulate_batch(env, (0,) * env.d, StopSpec.first_of(horizon=horizon),
                         seed, n_traj, threads=threads)
    samples = out.final.astype(np.float64) / horizon
    v = samples.mean(axis=0)
    cis = [mean_ci(samples[:, j], confidence) for j in range(env.d)]
    return VelocityEstimate(v_hat=v, ci=[list(c) for c in cis], v_hat_L=None,
                            method="plugin", n=n_traj)


def velocity_from_regenerations(records, seed: int = 0,
                                confidence: float = 0.99) -> VelocityEstimate:
    """Ratio estimator mean(dX)/mean(dt) over confirmed regeneration pairs."""
    incs = [(dt, dx) for r in records for (dt, dx) in r.increments()]
    if len(incs) < 1000:
        raise ValueError("ratio velocity needs at least 1000 regeneration pairs")
    dt = np.array([i[0] for i in incs], dtype=np.float64)
    dx = np.array([i[1] for i in incs], dtype=np.float64)
    d = dx.shape[1]
    v = dx.mean(axis=0) / dt.mean()
    cis = []
    for j in range(d):
        pairs = np.stack([dx[:, j], dt], axis=1)
        cis.append(bootstrap_ci(pairs, lambda m: m[:, 0].mean() / m[:, 1].mean(),
                                seed=rng.derive_key(seed, j), confidence=confidence))
    first = np.array([r.positions[0] for r in records if r.n_confirmed > 0],
                     dtype=np.float64)
    mean_disp = first.mean(axis=0)
    v_hat_l = mean_disp / np.linalg.norm(mean_disp)
    return VelocityEstimate(v_hat=v, ci=[list(c) for c in cis], v_hat_L=v_hat_l,
                            method="regeneration_ratio", n=len(incs))


def project_orthogonal(z, v) -> np.ndarray:
    """Component of z orthogonal to the unit vector v."""
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ValueError("projection direction must be a unit vector")
    z = np.asarray(z, dtype=np.float64)
    return z - (z @ v) * v


# ---------------------------------------------------------------------------
# diffusive scaling


def clt_scaling_check(env: Environment, n: int, reps: int, seed: int,
                      directions=None, v_hat: np.ndarray | None = None,
                      ratio_reps: int | None = None, threads: int = 1,
                      alpha: float = 0.01) -> dict:
    """Normality, variance t-scaling and covariance of the rescaled walk.

    Simulates `reps` trajectories to time n with mid-time checkpoints,
    standardizes (X_n - v n)/sqrt(n) per direction and applies an
    Anderson-Darling test; variance linearity is checked as the ratio
    Var at t in {1/4, 1/2} over Var at 1. The empirical covariance of the
    rescaled endpoint is reported with off-diagonal bootstrap intervals.
    """
    if reps < 300:
        raise ValueError("need at least 300 trajectories per grid point")
    d = env.d
    cps = [n // 4, n // 2, n]
    big = max(reps, ratio_reps or 0)
    out = simulate_batch(env, (0,) * d, StopSpec.first_of(horizon=n), seed, big,
                         checkpoints=cps, threads=threads)
    pos = out.checkpoints.astype(np.float64)          # (big, 3, d)
    if v_hat is None:
        v_hat = pos[:reps, 2].mean(axis=0) / n
    v_hat = np.asarray(v_hat, dtype=np.float64)

    if directions is None:
        directions = list(np.eye(d))
    dir_reports = []
    crit_idx = {15.0: 0, 10.0: 1, 5.0: 2, 2.5: 3, 1.0: 4}[alpha * 100]
    for w in directions:
        w = np.asarray(w, dtype=np.float64)
        s = (pos[:reps, 2] - v_hat * n) @ w / math.sqrt(n)
        std = s.std(ddof=1)
        z = (s - s.mean()) / std
        ad = sps.anderson(z, dist="norm")
        passed = bool(ad.statistic < ad.critical_values[crit_idx])
        dir_reports.append({"direction": [float(x) for x in w],
                            "ad_statistic": float(ad.statistic),
                            "ad_critical": float(ad.critical_values[crit_idx]),
                            "normality_pass": passed,
                            "variance": float(std ** 2)})

    m = ratio_reps or reps
    ratios = {}
    for ti, t in ((0, 0.25), (1, 0.5)):
        w = np.asarray(directions[0], dtype=np.float64)
        num = ((pos[:m, ti] - v_hat * (n * t)) @ w) ** 2
        den = ((pos[:m, 2] - v_hat * n) @ w) ** 2
        pairs = np.stack([num, den], axis=1)
        point = float(num.mean() / den.mean())
        ci = bootstrap_ci(pairs, lambda mm: mm[:, 0].mean() / mm[:, 1].mean(),
                          seed=rng.derive_key(seed, 0xF0 + ti), confidence=0.99)
        ratios[t] = {"ratio": point, "ci": list(ci),
                     "consistent": bool(ci[0] <= t <= ci[1])}

    scaled = (pos[:reps, 2] - v_hat * n) / math.sqrt(n)
    r_hat = np.cov(scaled.T)
    eig = np.linalg.eigvalsh(r_hat)
    off_ci = {}
    for i in range(d):
        for j in range(i + 1, d):
            pairs = scaled[:, (i, j)]
            off_ci[f"{i}{j}"] = list(bootstrap_ci(
                pairs, lambda mm: float(np.cov(mm.T)[0, 1]),
                seed=rng.derive_key(seed, 0xE0 + i * d + j), confidence=0.99))

    return {"n": n, "reps": reps, "v_hat": [float(x) for x in v_hat],
            "directions": dir_reports, "variance_ratios": ratios,
            "covariance": r_hat.tolist(), "cov_eigenvalues": eig.tolist(),
            "cov_psd": bool(eig.min() > -1e-8),
            "cov_offdiag_ci": off_ci,
            "normality_test": "anderson-darling", "alpha": alpha}


# ---------------------------------------------------------------------------
# transverse fluctuations


def varsigma_window(g: float, kappa: float):
    """Admissible transverse-exponent window ((gt + 2 ln(1/k))/(2gt), 1)."""
    t = transition_scale(g, kappa)
    lo = (g * t + 2 * math.log(1 / kappa)) / (2 * g * t)
    return (lo, 1.0)


def epsilon_choice(g: float, kappa: float, varsigma: float) -> float:
    """Reference slack exponent 2 ln(1/k)(2 - 2 varsigma)/(gt - 2 ln(1/k))."""
    t = transition_scale(g, kappa)
    return 2.0 * math.log(1 / kappa) * (2 - 2 * varsigma) / (g * t - 2 * math.log(1 / kappa))


def atypical_epsilon_scale(n: float) -> float:
    """Reference inner-scale exponent (ln N)^{-3/4} for atypical-event boxes."""
    if n <= 1:
        raise ValueError("need N > 1")
    return math.log(n) ** -0.75


def transversal_fluctuation_stat(batch, v_hat_l, m_level: float, l,
                                 excursion: int = 1000, eta: float = 1.0,
                                 varsigma_grid=None, g: float | None = None,
                                 kappa: float | None = None) -> dict:
    """Distribution of the sup orthogonal deviation up to the last visit.

    The last visit to {x . l <= M} is confirmed when the walk then stays
    above the level for `excursion` further steps; unconfirmed candidates
    are censored and reported. Exceedance frequencies are computed at
    thresholds eta * M^varsigma over the exponent grid.
    """
    dspec = l if isinstance(l, DirectionSpec) else DirectionSpec.from_int(l)
    lvec = dspec.as_array()
    v_hat_l = np.asarray(v_hat_l, dtype=np.float64)
    if varsigma_grid is None:
        if g is None or kappa is None:
            raise ValueError("provide either a varsigma grid or (g, kappa)")
        lo, hi = varsigma_window(g, kappa)
        varsigma_grid = np.linspace(lo + 0.02, hi - 0.02, 4)

    sups, signs = [], []
    censored = 0
    n_traj = len(batch.n_steps)
    for i in range(n_traj):
        pos = batch.trajectory(i).positions().astype(np.float64)
        proj = pos @ lvec
        below = np.nonzero(proj <= m_level)[0]
        if below.size == 0:
            censored += 1
            continue
        last = int(below[-1])
        if last + excursion > len(proj) - 1:
            censored += 1
            continue
        if np.min(proj[last + 1:last + excursion + 1]) <= m_level:
            # cannot happen for the true last visit; guards indexing slips
            censored += 1
            continue
        seg = pos[:last + 1]
        ortho = seg - np.outer(seg @ v_hat_l, v_hat_l)
        sups.append(float(np.linalg.norm(ortho, axis=1).max()))
        signs.append(float(ortho[-1][-1]))
    sups = np.array(sups)
    frac_censored = censored / n_traj
    ref = {}
    if g is not None and kappa is not None:
        ref = {"epsilon_reference": {round(float(vs), 4): epsilon_choice(g, kappa, float(vs))
                                     for vs in varsigma_grid}}
    if frac_censored > 0.5:
        return {"verdict": "inconclusive", "censored_fraction": frac_censored,
                "n_confirmed": int(sups.size), **ref}

    exceed = {}
    for vs in varsigma_grid:
        thr = eta * m_level ** float(vs)
        k = int((sups > thr).sum())
        exceed[round(float(vs), 4)] = {"threshold": thr,
                                       "frequency": k / max(sups.size, 1),
                                       "ci": binomial_ci(k, sups.size)}
    nz = [s for s in signs if s != 0]
    pos_count = sum(1 for s in nz if s > 0)
    sign_p = float(sps.binomtest(pos_count, len(nz), 0.5).pvalue) if nz else float("nan")
    return {"verdict": "ok", "censored_fraction": frac_censored,
            "n_confirmed": int(sups.size),
            "sup_quantiles": {q: float(np.quantile(sups, q))
                              for q in (0.5, 0.9, 0.99)} if sups.size else {},
            "exceedance": exceed, "eta": eta,
            "transverse_sign_test_p": sign_p, **ref}


# ---------------------------------------------------------------------------
# atypical quenched events


def atypical_quenched_frequency(spec: EnvironmentSpec, m_level: float, beta: float,
                                c: float, direction, n_env: int, seed: int,
                                method: str = "exact", n_walks: int = 4000,
                                g: float | None = None,
                                transverse_cap: float | None = None) -> dict:
    """Fraction of environments whose forward slab-exit probability is tiny.

    For each environment the quenched probability of leaving the slab
    {|x . l| < M} on the forward side is computed (exact solve with tracked
    transverse truncation, or MC), and compared with exp(-c M^beta).
    Diagnostic only.
    """
    if not (c > 0 and beta > 0 and m_level > 0):
        raise ValueError("need positive c, beta, M")
    dspec = DirectionSpec.from_int(direction)
    rot = make_rotation(direction)
    threshold = math.exp(-c * m_level ** beta)
    ell = dspec.ell
    d = dspec.d
    cap = transverse_cap if transverse_cap is not None else max(12.0 * m_level, 40.0)

    below = 0
    ambiguous = 0
    p_list = []
    for i in range(n_env):
        env = generate(spec, rng.derive_key(seed, i))
        if method == "exact":
            def classify(sites):
                t = sites.astype(np.float64) @ ell
                trans = sites.astype(np.float64) @ rot.matrix[:, 1:]
                codes = np.full(sites.shape[0], -1, dtype=np.int8)
                inside = np.abs(t) < m_level
                far = (np.abs(trans) >= cap).any(axis=1)
                codes[inside & far] = 3
                codes[inside & ~far] = 0
                codes[t >= m_level] = 1
                codes[t <= -m_level] = 2
                return codes

            lo_r = np.array([-m_level - 1] + [-cap - 2] * (d - 1))
            hi_r = np.array([m_level + 1] + [cap + 2] * (d - 1))
            corners = np.array([rot.matrix @ np.where(
                [(mask >> j) & 1 for j in range(d)], hi_r, lo_r)
                for mask in range(1 << d)])
            lo_i = np.floor(corners.min(axis=0)).astype(np.int64) - 1
            hi_i = np.ceil(corners.max(axis=0)).astype(np.int64) + 1
            res = solve_absorption(env, classify, ("plus", "minus", "escape"),
                                   (0,) * d, lo_i, hi_i)
            p_fwd = res.prob("plus")
            esc = res.prob("escape")
            if p_fwd < threshold <= p_fwd + esc:
                ambiguous += 1
            p_list.append(p_fwd)
            if p_fwd + esc < threshold:
                below += 1
        else:
            from .walk import LevelDown, LevelUp
            stop = StopSpec.first_of(LevelUp(tuple(ell), m_level),
                                     LevelDown(tuple(ell), -m_level),
                                     horizon=int(400 * m_level ** 2 + 20000))
            out = simulate_batch(env, (0,) * d, stop, rng.derive_key(seed, i, 1),
                                 n_walks)
            p_fwd = float((out.status == 0).mean())
            p_list.append(p_fwd)
            if p_fwd < threshold:
                below += 1

    freq = below / n_env
    ci = binomial_ci(below, n_env)
    out = {"frequency": freq, "ci": list(ci), "threshold": threshold,
           "n_env": n_env, "method": method, "beta": beta, "c": c, "M": m_level,
           "p_quantiles": {q: float(np.quantile(p_list, q)) for q in (0.1, 0.5, 0.9)}}
    if below == 0:
        out["upper_bound"] = rule_of_three(n_env)
    if ambiguous:
        out["ambiguous_envs"] = ambiguous
    if method == "mc" and threshold < 10.0 / n_walks:
        out["verdict"] = "inconclusive"
        out["note"] = "threshold below MC resolution"
    if g is not None:
        t = transition_scale(g, spec.kappa)
        lo = 2 * g * t / (3 * g * t - 2 * math.log(1 / spec.kappa))
        out["beta_window"] = [lo, 1.0]
        if not (lo < beta < 1.0):
            out["beta_outside_window"] = True
    return out
