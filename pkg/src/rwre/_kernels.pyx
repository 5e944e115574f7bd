# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping kernel.

Operation-for-operation twin of ``_kernels_py.py``; both backends consume
the same cumulative-probability windows and the same counter streams, so
trajectories agree bit for bit. Keep the two files in sync.
"""

from libc.math cimport sqrt

import numpy as np

BACKEND = "cython"

cdef unsigned long long GAMMA_C = 0x9E3779B97F4A7C15ULL
cdef double INV53 = 1.0 / 9007199254740992.0

cdef int K_LEVEL = 0
cdef int K_BOX = 1
cdef int K_CONE = 2
cdef int K_TRANSVERSE = 3

cdef int ST_HORIZON = -1
cdef int ST_WINDOW = -2
cdef int ST_REGION = -3

cdef int EPS_NONE_C = 255


cdef inline unsigned long long _mix64(unsigned long long z) nogil:
    z ^= z >> 30
    z *= 0xBF58476D1CE4E5B9ULL
    z ^= z >> 27
    z *= 0x94D049BB133111EBULL
    z ^= z >> 31
    return z


cdef inline double _u01(unsigned long long key, unsigned long long counter) nogil:
    return <double>(_mix64(key + (counter + 1) * GAMMA_C) >> 11) * INV53


cdef inline unsigned long long _derive(unsigned long long parent, unsigned long long child) nogil:
    return _mix64((parent ^ _mix64((child + 1) * GAMMA_C)) + GAMMA_C)


cdef inline bint _stop_triggered(int k, const int* kinds,
                                 const double* vecs, const double* ref,
                                 const double* lo, const double* hi,
                                 const double* c1, const double* c2,
                                 const long long* pos, int d) nogil:
    cdef int kind = kinds[k]
    cdef double s, c, dot, n2, rel
    cdef int i, j
    if kind == K_LEVEL:
        s = 0.0
        for i in range(d):
            s += pos[i] * vecs[(k * d + 0) * d + i]
        if c2[k] > 0:
            return s >= c1[k]
        return s <= c1[k]
    if kind == K_BOX:
        for j in range(d):
            c = 0.0
            for i in range(d):
                c += (pos[i] - ref[k * d + i]) * vecs[(k * d + j) * d + i]
            if not (lo[k * d + j] < c and c < hi[k * d + j]):
                return True
        return False
    if kind == K_CONE:
        dot = 0.0
        n2 = 0.0
        for i in range(d):
            rel = pos[i] - ref[k * d + i]
            dot += rel * vecs[(k * d + 0) * d + i]
            n2 += rel * rel
        return dot < c1[k] * sqrt(n2)
    # K_TRANSVERSE
    for j in range(d - 1):
        c = 0.0
        for i in range(d):
            c += (pos[i] - ref[k * d + i]) * vecs[(k * d + j) * d + i]
        if c >= c1[k] or c <= -c1[k]:
            return True
    return False


cdef int _step_core(const double[:, ::1] cum,
                    const long long* win_lo, const long long* win_shape,
                    const long long* region_lo, const long long* region_hi,
                    long long* pos, unsigned long long key, long long* state,
                    long long horizon, int mode, double kappa,
                    const int* kinds, const double* vecs, const double* ref,
                    const double* lo, const double* hi,
                    const double* c1, const double* c2,
                    int n_stops, int d,
                    unsigned char* moves_row, unsigned char* eps_row, bint record,
                    const long long* ckpts, int n_ckpt, long long* ckpt_row) nogil:
    cdef long long n = state[0]
    cdef unsigned long long counter = <unsigned long long>state[1]
    cdef int cp = <int>state[2]
    cdef bint coupled = mode == 1
    cdef int two_d = 2 * d
    cdef double two_d_kappa = two_d * kappa
    cdef double one_minus = 1.0 - two_d_kappa
    cdef int status_set, status, k, i, j, m, eps_code, axis
    cdef long long row, c
    cdef double u, v

    while True:
        if cp < n_ckpt and n == ckpts[cp]:
            for i in range(d):
                ckpt_row[cp * d + i] = pos[i]
            cp += 1

        status_set = 0
        status = 0
        for k in range(n_stops):
            if _stop_triggered(k, kinds, vecs, ref, lo, hi, c1, c2, pos, d):
                status = k
                status_set = 1
                break
        if not status_set and n >= horizon:
            status = ST_HORIZON
            status_set = 1
        if not status_set:
            for i in range(d):
                if pos[i] < region_lo[i] or pos[i] > region_hi[i]:
                    status = ST_REGION
                    status_set = 1
                    break
        # win_shape[0] == 0 marks a one-row window shared by all sites
        row = 0
        if not status_set and win_shape[0] != 0:
            for i in range(d):
                c = pos[i] - win_lo[i]
                if c < 0 or c >= win_shape[i]:
                    status = ST_WINDOW
                    status_set = 1
                    break
                row = row * win_shape[i] + c
        if status_set:
            state[0] = n
            state[1] = <long long>counter
            state[2] = cp
            return status

        u = _u01(key, counter)
        counter += 1
        if coupled:
            if u < two_d_kappa:
                m = <int>(u / kappa)
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
            eps_code = EPS_NONE_C
            m = two_d - 1
            for j in range(two_d):
                if u < cum[row, j]:
                    m = j
                    break

        if record:
            moves_row[n] = <unsigned char>m
            if coupled:
                eps_row[n] = <unsigned char>eps_code
        axis = m >> 1
        if (m & 1) == 0:
            pos[axis] += 1
        else:
            pos[axis] -= 1
        n += 1


def run_batch(const double[:, ::1] cum,
              long long[::1] win_lo, long long[::1] win_shape,
              long long[::1] region_lo, long long[::1] region_hi,
              long long[::1] x0, unsigned long long master_key,
              long long idx0, long long n_traj, long long horizon,
              int mode, double kappa,
              int[::1] kinds, double[:, :, ::1] vecs, double[:, ::1] ref,
              double[:, ::1] lo, double[:, ::1] hi,
              double[::1] c1, double[::1] c2,
              unsigned char[:, ::1] moves_out, unsigned char[:, ::1] eps_out,
              long long[::1] ckpts, long long[:, :, ::1] ckpt_out,
              int[::1] status_out, long long[::1] nsteps_out,
              long long[:, ::1] final_out, long long[::1] draws_out):
    """Run trajectories idx0..idx0+n_traj-1 from x0, each on its own stream."""
    cdef int d = x0.shape[0]
    cdef int n_stops = kinds.shape[0]
    cdef int n_ckpt = ckpts.shape[0]
    cdef bint record = moves_out.shape[1] > 0
    cdef long long t
    cdef int i, status
    cdef unsigned long long key
    cdef long long pos[16]
    cdef long long state[3]
    cdef unsigned char dummy_u8
    cdef long long dummy_i64
    cdef const double* vecs_p = &vecs[0, 0, 0] if n_stops > 0 else NULL
    cdef const double* ref_p = &ref[0, 0] if n_stops > 0 else NULL
    cdef const double* lo_p = &lo[0, 0] if n_stops > 0 else NULL
    cdef const double* hi_p = &hi[0, 0] if n_stops > 0 else NULL
    cdef const double* c1_p = &c1[0] if n_stops > 0 else NULL
    cdef const double* c2_p = &c2[0] if n_stops > 0 else NULL
    cdef const int* kinds_p = &kinds[0] if n_stops > 0 else NULL
    cdef const long long* ckpts_p = &ckpts[0] if n_ckpt > 0 else NULL
    cdef unsigned char* moves_p
    cdef unsigned char* eps_p
    cdef long long* ckpt_p

    if d > 16:
        raise ValueError("dimension too large for kernel (max 16)")

    with nogil:
        for t in range(n_traj):
            key = _derive(master_key, <unsigned long long>(idx0 + t))
            for i in range(d):
                pos[i] = x0[i]
            state[0] = 0
            state[1] = 0
            state[2] = 0
            moves_p = &moves_out[t, 0] if record else &dummy_u8
            eps_p = &eps_out[t, 0] if record and mode == 1 else &dummy_u8
            ckpt_p = &ckpt_out[t, 0, 0] if n_ckpt > 0 else &dummy_i64
            status = _step_core(cum, &win_lo[0], &win_shape[0],
                                &region_lo[0], &region_hi[0],
                                pos, key, state, horizon, mode, kappa,
                                kinds_p, vecs_p, ref_p, lo_p, hi_p, c1_p, c2_p,
                                n_stops, d, moves_p, eps_p, record,
                                ckpts_p, n_ckpt, ckpt_p)
            status_out[t] = status
            nsteps_out[t] = state[0]
            draws_out[t] = state[1]
            for i in range(d):
                final_out[t, i] = pos[i]


def resume_one(const double[:, ::1] cum,
               long long[::1] win_lo, long long[::1] win_shape,
               long long[::1] region_lo, long long[::1] region_hi,
               long long[::1] pos, unsigned long long key, long long[::1] state,
               long long horizon, int mode, double kappa,
               int[::1] kinds, double[:, :, ::1] vecs, double[:, ::1] ref,
               double[:, ::1] lo, double[:, ::1] hi,
               double[::1] c1, double[::1] c2,
               unsigned char[::1] moves_row, unsigned char[::1] eps_row,
               long long[::1] ckpts, long long[:, ::1] ckpt_row):
    """Continue a paused trajectory (window swap) in place."""
    cdef int d = pos.shape[0]
    cdef int n_stops = kinds.shape[0]
    cdef int n_ckpt = ckpts.shape[0]
    cdef bint record = moves_row.shape[0] > 0
    cdef unsigned char dummy_u8
    cdef long long dummy_i64
    cdef int status
    status = _step_core(cum, &win_lo[0], &win_shape[0],
                        &region_lo[0], &region_hi[0],
                        &pos[0], key, &state[0], horizon, mode, kappa,
                        &kinds[0] if n_stops > 0 else NULL,
                        &vecs[0, 0, 0] if n_stops > 0 else NULL,
                        &ref[0, 0] if n_stops > 0 else NULL,
                        &lo[0, 0] if n_stops > 0 else NULL,
                        &hi[0, 0] if n_stops > 0 else NULL,
                        &c1[0] if n_stops > 0 else NULL,
                        &c2[0] if n_stops > 0 else NULL,
                        n_stops, d,
                        &moves_row[0] if record else &dummy_u8,
                        &eps_row[0] if record and mode == 1 else &dummy_u8,
                        record,
                        &ckpts[0] if n_ckpt > 0 else NULL, n_ckpt,
                        &ckpt_row[0, 0] if n_ckpt > 0 else &dummy_i64)
    return status
