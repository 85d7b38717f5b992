# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled column kernels; see _pykernels for the reference semantics."""
import numpy as np

from libc.math cimport erf, exp, log, log1p, INFINITY
from scipy.special.cython_special cimport erfcx
from libc.stdlib cimport malloc, free

cdef double SQRT_PI = 1.7724538509055159
cdef double HALF_LOG_2PI = 0.9189385332046727
cdef double ERF_TAIL = 6.5
cdef double LOG_2 = 0.6931471805599453
cdef int GROUND = 0
cdef int OBJECT = 1


cdef inline double _pixel_energy(double d, double c, double f, double sigma, double p_out,
                                 double d_max, double log_pu, double log_1mp) noexcept nogil:
    cdef double s = sigma / c
    cdef double lo = -f / s
    cdef double hi = (d_max - f) / s
    cdef double t, ld, lz, r, lg
    if lo < -ERF_TAIL and hi > ERF_TAIL:
        ld = LOG_2
    elif lo >= 0.0:
        t = erfcx(lo) - exp((lo - hi) * (lo + hi)) * erfcx(hi)
        if not t > 0.0:
            return -log_pu
        ld = -lo * lo + log(t)
    elif hi <= 0.0:
        t = erfcx(-hi) - exp((hi - lo) * (hi + lo)) * erfcx(-lo)
        if not t > 0.0:
            return -log_pu
        ld = -hi * hi + log(t)
    else:
        ld = log(erf(hi) - erf(lo))
    lz = log(0.5 * s * SQRT_PI) + ld
    r = c * (d - f) / sigma
    lg = log_1mp - lz - r * r
    if lg > log_pu:
        return -(lg + log1p(exp(log_pu - lg)))
    return -(log_pu + log1p(exp(lg - log_pu)))


cdef inline void _solve_plane(double S0, double S1, double S2, double Sd, double Svd, long n_valid,
                              long vb, double mu_a, double sigma_a, double mu_b, double sigma_b,
                              double* a, double* b) noexcept nogil:
    cdef double alpha, beta, S1u, S2u, Sud, m00, m01, m11, r0, r1, det, ac
    if n_valid == 0 or (sigma_a == 0.0 and sigma_b == 0.0):
        a[0] = mu_a
        b[0] = mu_b
        return
    if sigma_a == 0.0:
        beta = 1.0 / (sigma_b * sigma_b)
        a[0] = mu_a
        b[0] = (Svd - mu_a * S1 + beta * mu_b) / (S2 + beta)
        return
    alpha = 1.0 / (sigma_a * sigma_a)
    if sigma_b == 0.0:
        a[0] = (Sd - mu_b * S1 + alpha * mu_a) / (S0 + alpha)
        b[0] = mu_b
        return
    beta = 1.0 / (sigma_b * sigma_b)
    S1u = S1 - vb * S0
    S2u = S2 - vb * (S1 + S1u)
    Sud = Svd - vb * Sd
    m00 = S0 + alpha
    m01 = S1u - alpha * vb
    m11 = S2u + alpha * vb * vb + beta
    r0 = Sd + alpha * mu_a
    r1 = Sud - alpha * vb * mu_a + beta * mu_b
    det = m00 * m11 - m01 * m01
    if n_valid < 2 or det <= 1e-9 * m00 * m11:
        a[0] = (Sd - mu_b * S1 + alpha * mu_a) / (S0 + alpha)
        b[0] = mu_b
        return
    ac = (r0 * m11 - m01 * r1) / det
    b[0] = (m00 * r1 - m01 * r0) / det
    a[0] = ac - b[0] * vb


def segment_table(const long[::1] bounds, const double[::1] disparity, const double[::1] confidence,
                  const double[:, :, ::1] moments, const long[::1] count,
                  const double[:, ::1] sem_prefix, const long[::1] geo_of_sem, const double[::1] ecut,
                  const double[::1] sigma_noise, const double[:, ::1] priors,
                  double p_out, double d_max, double w_l, double invalid_cost):
    cdef Py_ssize_t m = bounds.shape[0] - 1
    cdef Py_ssize_t K = geo_of_sem.shape[0]
    cost_arr = np.full((m, m + 1, 3), np.inf)
    sem_arr = np.full((m, m + 1, 3), -1, dtype=np.int64)
    pa_arr = np.zeros((m, m + 1, 3))
    pb_arr = np.zeros((m, m + 1, 3))
    cdef double[:, :, ::1] cost = cost_arr
    cdef long[:, :, ::1] sem = sem_arr
    cdef double[:, :, ::1] pa = pa_arr
    cdef double[:, :, ::1] pb = pb_arr
    cdef double log_pu = log(p_out / d_max)
    cdef double log_1mp = log1p(-p_out)
    cdef Py_ssize_t i, j, g, k, v, vb, vt1, kbest
    cdef double a, b, depth, e_sem, best_sem, qa, qb, za, zb, norm, sigma
    cdef double mu_a, sigma_a, mu_b, sigma_b
    with nogil:
        for g in range(3):
            mu_a = priors[g, 0]
            sigma_a = priors[g, 1]
            mu_b = priors[g, 2]
            sigma_b = priors[g, 3]
            sigma = sigma_noise[g]
            norm = (HALF_LOG_2PI + log(sigma_a) if sigma_a > 0 else 0.0) + \
                   (HALF_LOG_2PI + log(sigma_b) if sigma_b > 0 else 0.0)
            for i in range(m):
                vb = bounds[i]
                for j in range(i + 1, m + 1):
                    vt1 = bounds[j]
                    _solve_plane(moments[g, 0, vt1] - moments[g, 0, vb],
                                 moments[g, 1, vt1] - moments[g, 1, vb],
                                 moments[g, 2, vt1] - moments[g, 2, vb],
                                 moments[g, 3, vt1] - moments[g, 3, vb],
                                 moments[g, 4, vt1] - moments[g, 4, vb],
                                 count[vt1] - count[vb], vb,
                                 mu_a, sigma_a, mu_b, sigma_b, &a, &b)
                    depth = 0.0
                    for v in range(vb, vt1):
                        if disparity[v] < 0:
                            depth += invalid_cost
                        else:
                            depth += _pixel_energy(disparity[v], confidence[v], b * v + a, sigma,
                                                   p_out, d_max, log_pu, log_1mp)
                    best_sem = INFINITY
                    kbest = -1
                    for k in range(K):
                        if geo_of_sem[k] != g:
                            continue
                        e_sem = w_l * (sem_prefix[vt1, k] - sem_prefix[vb, k])
                        if e_sem < best_sem:
                            best_sem = e_sem
                            kbest = k
                    qa = 0.0
                    qb = 0.0
                    if sigma_a > 0:
                        za = (a - mu_a) / sigma_a
                        qa = za * za
                    if sigma_b > 0:
                        zb = (b - mu_b) / sigma_b
                        qb = zb * zb
                    cost[i, j, g] = ((depth + best_sem) + ((qa + qb) + norm)) + ecut[i]
                    sem[i, j, g] = kbest
                    pa[i, j, g] = a
                    pb[i, j, g] = b
    return cost_arr, sem_arr, pa_arr, pb_arr


cdef struct Chains:
    const long* bounds
    const long* sem
    long* PK
    long* PG
    long m1  # m + 1
    long* buf1
    long* buf2


cdef inline long _idx(long m1, long i, long j, long g) noexcept nogil:
    return (i * m1 + j) * 3 + g


cdef long _fill(Chains* ch, long i, long j, long g, long* buf) noexcept nogil:
    """Write the bottom-up stixel keys of a state's chain into buf; return its length."""
    cdef long n = 0
    cdef long k, t
    while True:
        t = _idx(ch.m1, i, j, g)
        buf[3 * n] = ch.bounds[i]
        buf[3 * n + 1] = g
        buf[3 * n + 2] = ch.sem[t]
        n += 1
        k = ch.PK[t]
        if k < 0:
            break
        g = ch.PG[t]
        j = i
        i = k
    return n


cdef bint _lex_less(Chains* ch, long i1, long j1, long g1, long i2, long j2, long g2) noexcept nogil:
    cdef long n1, n2, p, q, x
    if i1 == i2 and j1 == j2 and g1 == g2:
        return False
    n1 = _fill(ch, i1, j1, g1, ch.buf1)
    n2 = _fill(ch, i2, j2, g2, ch.buf2)
    # buffers are top-down; compare from the bottom stixel
    p = n1 - 1
    q = n2 - 1
    while p >= 0 and q >= 0:
        for x in range(3):
            if ch.buf1[3 * p + x] != ch.buf2[3 * q + x]:
                return ch.buf1[3 * p + x] < ch.buf2[3 * q + x]
        p -= 1
        q -= 1
    return n1 < n2


cdef inline bint _better(Chains* ch, double c1, long n1, long i1, long j1, long g1,
                         double c2, long n2, long i2, long j2, long g2) noexcept nogil:
    if c1 != c2:
        return c1 < c2
    if n1 != n2:
        return n1 < n2
    if i2 < 0:
        return False
    return _lex_less(ch, i1, j1, g1, i2, j2, g2)


def column_dp(const long[::1] bounds, const double[:, :, ::1] cost, const long[:, :, ::1] sem,
              const double[:, :, ::1] pa, const double[:, :, ::1] pb,
              const double[::1] first, const double[:, ::1] base, double w_grav, double w_ord):
    cdef long m = bounds.shape[0] - 1
    C_arr = np.full((m, m + 1, 3), np.inf)
    N_arr = np.zeros((m, m + 1, 3), dtype=np.int64)
    PK_arr = np.full((m, m + 1, 3), -1, dtype=np.int64)
    PG_arr = np.full((m, m + 1, 3), -1, dtype=np.int64)
    bs_arr = np.full((m + 1, 3), -1, dtype=np.int64)
    cdef double[:, :, ::1] C = C_arr
    cdef long[:, :, ::1] N = N_arr
    cdef long[:, :, ::1] PK = PK_arr
    cdef long[:, :, ::1] PG = PG_arr
    cdef long[:, ::1] best_start = bs_arr
    cdef Chains ch
    ch.bounds = &bounds[0]
    ch.sem = &sem[0, 0, 0]
    ch.PK = &PK[0, 0, 0]
    ch.PG = &PG[0, 0, 0]
    ch.m1 = m + 1
    ch.buf1 = <long*> malloc(3 * (m + 1) * sizeof(long))
    ch.buf2 = <long*> malloc(3 * (m + 1) * sizeof(long))
    cdef long i, j, g, gp, k, n, vrow, bk, bg, bi, fi, fg
    cdef double seg, bc, c, d_lo, d_up, x, pen
    cdef long bn
    cdef bint grav, order
    try:
        with nogil:
            for j in range(1, m + 1):
                for i in range(j):
                    for g in range(3):
                        seg = cost[i, j, g]
                        if i == 0:
                            C[0, j, g] = seg + first[g]
                            N[0, j, g] = 1
                            continue
                        bc = INFINITY
                        bn = 0
                        bk = -1
                        bg = -1
                        vrow = bounds[i]
                        for gp in range(3):
                            grav = gp == GROUND and g == OBJECT and w_grav != 0.0
                            order = gp == OBJECT and g == OBJECT and w_ord != 0.0
                            if grav or order:
                                d_up = pb[i, j, g] * vrow + pa[i, j, g]
                                for k in range(i):
                                    d_lo = pb[k, i, gp] * (vrow - 1) + pa[k, i, gp]
                                    x = d_up - d_lo
                                    if grav:
                                        pen = w_grav * (x * x)
                                    elif x > 0.0:
                                        pen = w_ord * (x * x)
                                    else:
                                        pen = 0.0
                                    c = C[k, i, gp] + (seg + (base[gp, g] + pen))
                                    n = N[k, i, gp] + 1
                                    if _better(&ch, c, n, k, i, gp, bc, bn, bk, i, bg):
                                        bc = c
                                        bn = n
                                        bk = k
                                        bg = gp
                            else:
                                k = best_start[i, gp]
                                c = C[k, i, gp] + (seg + base[gp, g])
                                n = N[k, i, gp] + 1
                                if _better(&ch, c, n, k, i, gp, bc, bn, bk, i, bg):
                                    bc = c
                                    bn = n
                                    bk = k
                                    bg = gp
                        C[i, j, g] = bc
                        N[i, j, g] = bn
                        PK[i, j, g] = bk
                        PG[i, j, g] = bg
                for g in range(3):
                    bi = -1
                    for i in range(j):
                        if bi < 0 or _better(&ch, C[i, j, g], N[i, j, g], i, j, g,
                                             C[bi, j, g], N[bi, j, g], bi, j, g):
                            bi = i
                    best_start[j, g] = bi
            fi = -1
            fg = -1
            for g in range(3):
                i = best_start[m, g]
                if fi < 0 or _better(&ch, C[i, m, g], N[i, m, g], i, m, g,
                                     C[fi, m, fg], N[fi, m, fg], fi, m, fg):
                    fi = i
                    fg = g
    finally:
        free(ch.buf1)
        free(ch.buf2)
    path = []
    i, j, g = fi, m, fg
    while True:
        path.append((int(i), int(j), int(g)))
        k = PK[i, j, g]
        if k < 0:
            break
        gp = PG[i, j, g]
        j = i
        i = k
        g = gp
    path.reverse()
    return float(C[fi, m, fg]), path, C_arr, N_arr, PK_arr, PG_arr, bs_arr
