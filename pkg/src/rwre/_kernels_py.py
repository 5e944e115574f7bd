"""Pure-Python stepping kernel; reference implementation.

The compiled kernel in ``_kernels.pyx`` mirrors this file operation for
operation (same stop encoding, same counter-stream draws, same IEEE double
arithmetic), so both backends produce bit-identical trajectories. Changes
here must be replicated there.
"""

from __future__ import annotations

import math

BACKEND = "python"

GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_MASK = 0xFFFFFFFFFFFFFFFF
_INV53 = 1.0 / 9007199254740992.0

# stop kinds
K_LEVEL = 0
K_BOX = 1
K_CONE = 2
K_TRANSVERSE = 3

# terminal statuses (stop clause indices are >= 0)
ST_HORIZON = -1
ST_WINDOW = -2
ST_REGION = -3

EPS_NONE = 255


def _mix64(z):
    z &= _MASK
    z = (z ^ (z >> 30)) * _M1 & _MASK
    z = (z ^ (z >> 27)) * _M2 & _MASK
    return z ^ (z >> 31)


def _u01(key, counter):
    return (_mix64((key + (counter + 1) * GAMMA) & _MASK) >> 11) * _INV53


def derive(parent, child):
    return _mix64(((parent ^ _mix64((child + 1) * GAMMA & _MASK)) + GAMMA) & _MASK)


def _stop_triggered(k, kinds, vecs, ref, lo, hi, c1, c2, pos, d):
    kind = kinds[k]
    if kind == K_LEVEL:
        s = 0.0
        for i in range(d):
            s += pos[i] * vecs[k, 0, i]
        return s >= c1[k] if c2[k] > 0 else s <= c1[k]
    if kind == K_BOX:
        for j in range(d):
            c = 0.0
            for i in range(d):
                c += (pos[i] - ref[k, i]) * vecs[k, j, i]
            if not (lo[k, j] < c < hi[k, j]):
                return True
        return False
    if kind == K_CONE:
        dot = 0.0
        n2 = 0.0
        for i in range(d):
            rel = pos[i] - ref[k, i]
            dot += rel * vecs[k, 0, i]
            n2 += rel * rel
        return dot < c1[k] * math.sqrt(n2)
    if kind == K_TRANSVERSE:
        for j in range(d - 1):
            c = 0.0
            for i in range(d):
                c += (pos[i] - ref[k, i]) * vecs[k, j, i]
            if c >= c1[k] or c <= -c1[k]:
                return True
        return False
    raise ValueError(f"unknown stop kind {kind}")


def step_core(cum, win_lo, win_shape, region_lo, region_hi,
              pos, key, state, horizon, mode, kappa,
              kinds, vecs, ref, lo, hi, c1, c2,
              moves_row, eps_row, ckpts, ckpt_row):
    """Advance one trajectory until a terminal condition.

    ``pos`` is the current site (int64[d], mutated); ``state`` is
    int64[3] = (steps taken, rng counter, checkpoint pointer), mutated.
    Returns the status code.
    """
    d = pos.shape[0]
    n = int(state[0])
    counter = int(state[1])
    cp = int(state[2])
    n_stops = kinds.shape[0]
    n_ckpt = ckpts.shape[0]
    record = moves_row.shape[0] > 0
    coupled = mode == 1
    two_d = 2 * d
    two_d_kappa = two_d * kappa
    one_minus = 1.0 - two_d_kappa
    key = int(key)

    while True:
        if cp < n_ckpt and n == ckpts[cp]:
            for i in range(d):
                ckpt_row[cp, i] = pos[i]
            cp += 1

        status = None
        for k in range(n_stops):
            if _stop_triggered(k, kinds, vecs, ref, lo, hi, c1, c2, pos, d):
                status = k
                break
        if status is None and n >= horizon:
            status = ST_HORIZON
        if status is None:
            for i in range(d):
                if pos[i] < region_lo[i] or pos[i] > region_hi[i]:
                    status = ST_REGION
                    break
        if status is None:
            # win_shape[0] == 0 marks a one-row window shared by all sites
            row = 0
            if win_shape[0] != 0:
                for i in range(d):
                    c = pos[i] - win_lo[i]
                    if c < 0 or c >= win_shape[i]:
                        status = ST_WINDOW
                        break
                    row = row * int(win_shape[i]) + int(c)
        if status is not None:
            state[0] = n
            state[1] = counter
            state[2] = cp
            return status

        u = _u01(key, counter)
        counter += 1
        if coupled:
            if u < two_d_kappa:
                m = int(u / kappa)
                if m >= two_d:
                    m = two_d - 1
                eps_code = m
            else:
                eps_code = two_d
                v = (u - two_d_kappa) / one_minus
                m = two_d - 1
                for j in range(two_d):
                    if v < (cum[row, j] - (j + 1) * kappa) / one_minus:
                        m = j
                        break
        else:
            eps_code = EPS_NONE
            m = two_d - 1
            for j in range(two_d):
                if u < cum[row, j]:
                    m = j
                    break

        if record:
            moves_row[n] = m
            if coupled:
                eps_row[n] = eps_code
        axis = m >> 1
        pos[axis] += 1 if (m & 1) == 0 else -1
        n += 1


def run_batch(cum, win_lo, win_shape, region_lo, region_hi,
              x0, master_key, idx0, n_traj, horizon, mode, kappa,
              kinds, vecs, ref, lo, hi, c1, c2,
              moves_out, eps_out, ckpts, ckpt_out,
              status_out, nsteps_out, final_out, draws_out):
    """Run trajectories idx0..idx0+n_traj-1 from x0, each on its own stream."""
    d = x0.shape[0]
    import numpy as np

    for t in range(n_traj):
        key = derive(int(master_key), idx0 + t)
        pos = x0.copy()
        state = np.zeros(3, dtype=np.int64)
        status = step_core(cum, win_lo, win_shape, region_lo, region_hi,
                           pos, key, state, horizon, mode, kappa,
                           kinds, vecs, ref, lo, hi, c1, c2,
                           moves_out[t], eps_out[t], ckpts, ckpt_out[t])
        status_out[t] = status
        nsteps_out[t] = state[0]
        draws_out[t] = state[1]
        for i in range(d):
            final_out[t, i] = pos[i]


def resume_one(cum, win_lo, win_shape, region_lo, region_hi,
               pos, key, state, horizon, mode, kappa,
               kinds, vecs, ref, lo, hi, c1, c2,
               moves_row, eps_row, ckpts, ckpt_row):
    """Continue a paused trajectory (window swap) in place."""
    return step_core(cum, win_lo, win_shape, region_lo, region_hi,
                     pos, key, state, horizon, mode, kappa,
                     kinds, vecs, ref, lo, hi, c1, c2,
                     moves_row, eps_row, ckpts, ckpt_row)
