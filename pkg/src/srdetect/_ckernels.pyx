# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernels; mirrors ``_pykernels`` bit for bit."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp, sqrt, sin, cos, isnan, INFINITY
from libc.stdint cimport uint64_t, int64_t, uint8_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0
cdef double TWO_PI = 6.283185307179586
cdef double SAT = 1e300
cdef double EXP_GUARD = 709.0
cdef int INIT_OFFSET = 1000
cdef int SUFFIX_XOR = 0x5555


cdef struct rng_t:
    uint64_t state
    int has_spare
    double spare


cdef struct det_t:
    int kind
    double scale
    double thr
    int init_mode
    double r0
    const double* edges
    const double* cdf
    Py_ssize_t nb


cdef inline uint64_t mix64(uint64_t x) noexcept nogil:
    cdef uint64_t z = x + GOLDEN
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline void seed_rng(rng_t* g, uint64_t seed, uint64_t stream, uint64_t index) noexcept nogil:
    g.state = mix64(mix64(mix64(seed) ^ stream) ^ index)
    g.has_spare = 0
    g.spare = 0.0


cdef inline uint64_t next_u64(rng_t* g) noexcept nogil:
    g.state = g.state + GOLDEN
    cdef uint64_t z = g.state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double uniform(rng_t* g) noexcept nogil:
    return <double>(next_u64(g) >> 11) * INV_2_53


cdef inline double normal(rng_t* g) noexcept nogil:
    cdef double u1, u2, rad
    if g.has_spare:
        g.has_spare = 0
        return g.spare
    u1 = 1.0 - uniform(g)
    u2 = uniform(g)
    rad = sqrt(-2.0 * log(u1))
    g.spare = rad * sin(TWO_PI * u2)
    g.has_spare = 1
    return rad * cos(TWO_PI * u2)


cdef inline double draw(rng_t* g, int fam, const double* coef, bint post) noexcept nogil:
    cdef double par = coef[1] if post else coef[0]
    if fam == 0:
        return coef[3] * (par + coef[2] * normal(g)) + coef[4]
    if fam == 1:
        return coef[4] - coef[3] * ((-log(1.0 - uniform(g))) / par)
    if fam == 2:
        return coef[3] if uniform(g) < par else coef[4]
    return par


cdef inline double step(det_t* d, double r, double l) noexcept nogil:
    if d.kind == 0:
        if l > EXP_GUARD:
            return SAT
        r = (1.0 + r) * exp(l) * d.scale
        return SAT if r > SAT else r
    r = r + l
    return 0.0 if r < 0.0 else r


cdef inline double init_stat(det_t* d, rng_t* g) noexcept nogil:
    cdef double u, lo, hi
    cdef Py_ssize_t a, b, mid, j
    if d.init_mode == 0:
        return d.r0
    u = uniform(g)
    a = 0
    b = d.nb + 1
    while a < b:
        mid = (a + b) // 2
        if u < d.cdf[mid]:
            b = mid
        else:
            a = mid + 1
    j = a - 1
    if j < 0:
        j = 0
    elif j > d.nb - 1:
        j = d.nb - 1
    lo = d.edges[j]
    hi = d.edges[j + 1]
    u = uniform(g)
    if hi == INFINITY:
        return lo
    return lo + u * (hi - lo)


cdef inline int64_t suffix(det_t* d, double r, int fam, const double* coef, rng_t* g,
                           int64_t cap, bint* censored) noexcept nogil:
    cdef int64_t j = 0
    censored[0] = 1
    while j < cap:
        j += 1
        r = step(d, r, draw(g, fam, coef, 1))
        if r >= d.thr:
            censored[0] = 0
            break
    return j


cdef class _Spec:
    cdef det_t det
    cdef int fam
    cdef double[::1] coef
    cdef double[::1] edges
    cdef double[::1] cdf

    def __init__(self, spec):
        if spec.fam < 0:
            raise TypeError("compiled kernels need a built-in model family")
        self.fam = spec.fam
        self.coef = np.ascontiguousarray(spec.coef, dtype=np.float64)
        self.edges = np.ascontiguousarray(spec.q_edges, dtype=np.float64)
        self.cdf = np.ascontiguousarray(spec.q_cdf, dtype=np.float64)
        self.det.kind = spec.kind
        self.det.scale = spec.scale
        self.det.thr = spec.thr
        self.det.init_mode = spec.init_mode
        self.det.r0 = spec.r0
        self.det.nb = self.edges.shape[0] - 1
        if self.det.init_mode != 0 and self.det.nb < 1:
            raise ValueError("table initialisation needs at least one bin")
        self.det.edges = &self.edges[0] if self.edges.shape[0] > 0 else NULL
        self.det.cdf = &self.cdf[0] if self.cdf.shape[0] > 0 else NULL


def run_lengths(spec, const int64_t[::1] nu, uint64_t seed, uint64_t stream, uint64_t start, int64_t cap):
    cdef _Spec s = _Spec(spec)
    cdef Py_ssize_t n = nu.shape[0], i
    T_arr = np.empty(n, dtype=np.int64)
    cens_arr = np.zeros(n, dtype=np.uint8)
    cdef int64_t[::1] T = T_arr
    cdef uint8_t[::1] cens = cens_arr
    cdef rng_t g, gi
    cdef double r
    cdef int64_t t, v
    cdef bint stopped
    cdef const double* coef = &s.coef[0]
    with nogil:
        for i in range(n):
            seed_rng(&g, seed, stream, start + i)
            seed_rng(&gi, seed, stream + INIT_OFFSET, start + i)
            r = init_stat(&s.det, &gi)
            v = nu[i]
            t = 0
            stopped = 0
            while t < cap:
                t += 1
                r = step(&s.det, r, draw(&g, s.fam, coef, t > v))
                if r >= s.det.thr:
                    stopped = 1
                    break
            T[i] = t
            cens[i] = 0 if stopped else 1
    return T_arr, cens_arr


def spliced_sum(spec, uint64_t seed, uint64_t stream, uint64_t start, Py_ssize_t n, int64_t cap):
    cdef _Spec s = _Spec(spec)
    T_arr = np.empty(n, dtype=np.int64)
    cens_arr = np.zeros(n, dtype=np.uint8)
    total_arr = np.empty(n, dtype=np.float64)
    first_arr = np.empty(n, dtype=np.float64)
    scens_arr = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] T = T_arr
    cdef uint8_t[::1] cens = cens_arr
    cdef double[::1] total = total_arr
    cdef double[::1] first = first_arr
    cdef int64_t[::1] scens = scens_arr
    cdef rng_t g, gs, gi
    cdef double r, acc
    cdef int64_t k, d
    cdef bint c
    cdef Py_ssize_t i
    cdef const double* coef = &s.coef[0]
    with nogil:
        for i in range(n):
            seed_rng(&g, seed, stream, start + i)
            seed_rng(&gs, seed, stream ^ SUFFIX_XOR, start + i)
            seed_rng(&gi, seed, stream + INIT_OFFSET, start + i)
            r = init_stat(&s.det, &gi)
            k = 0
            acc = 0.0
            while True:
                d = suffix(&s.det, r, s.fam, coef, &gs, cap, &c)
                acc += d
                if k == 0:
                    first[i] = d
                if c:
                    scens[i] += 1
                k += 1
                r = step(&s.det, r, draw(&g, s.fam, coef, 0))
                if r >= s.det.thr:
                    break
                if k >= cap:
                    cens[i] = 1
                    break
            T[i] = k
            total[i] = acc
    return T_arr, cens_arr, total_arr, first_arr, scens_arr


def spliced_grid(spec, const int64_t[::1] grid, uint64_t seed, uint64_t stream, uint64_t start,
                 Py_ssize_t n, int64_t cap):
    cdef _Spec s = _Spec(spec)
    cdef Py_ssize_t m = grid.shape[0], i, gidx
    out_arr = np.full((n, m), -1, dtype=np.int64)
    scens_arr = np.zeros(n, dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    cdef int64_t[::1] scens = scens_arr
    cdef rng_t g, gs, gi
    cdef double r
    cdef int64_t k, d, last = grid[m - 1]
    cdef bint c
    cdef const double* coef = &s.coef[0]
    with nogil:
        for i in range(n):
            seed_rng(&g, seed, stream, start + i)
            seed_rng(&gs, seed, stream ^ SUFFIX_XOR, start + i)
            seed_rng(&gi, seed, stream + INIT_OFFSET, start + i)
            r = init_stat(&s.det, &gi)
            k = 0
            gidx = 0
            while True:
                if k == grid[gidx]:
                    d = suffix(&s.det, r, s.fam, coef, &gs, cap, &c)
                    out[i, gidx] = d
                    if c:
                        scens[i] += 1
                    gidx += 1
                    if gidx == m:
                        break
                if k >= last:
                    break
                k += 1
                r = step(&s.det, r, draw(&g, s.fam, coef, 0))
                if r >= s.det.thr:
                    break
    return out_arr, scens_arr


def multicyclic(spec, int64_t nu, uint64_t seed, uint64_t stream, uint64_t start, Py_ssize_t n, int64_t cap):
    cdef _Spec s = _Spec(spec)
    delay_arr = np.empty(n, dtype=np.int64)
    alarms_arr = np.zeros(n, dtype=np.int64)
    cens_arr = np.zeros(n, dtype=np.uint8)
    cdef int64_t[::1] delay = delay_arr
    cdef int64_t[::1] alarms = alarms_arr
    cdef uint8_t[::1] cens = cens_arr
    cdef rng_t g, gi
    cdef double r
    cdef int64_t t
    cdef Py_ssize_t i
    cdef const double* coef = &s.coef[0]
    with nogil:
        for i in range(n):
            seed_rng(&g, seed, stream, start + i)
            seed_rng(&gi, seed, stream + INIT_OFFSET, start + i)
            r = init_stat(&s.det, &gi)
            t = 0
            while True:
                t += 1
                r = step(&s.det, r, draw(&g, s.fam, coef, t > nu))
                if r >= s.det.thr:
                    if t > nu:
                        break
                    alarms[i] += 1
                    r = init_stat(&s.det, &gi)
                elif t - nu >= cap:
                    cens[i] = 1
                    break
            delay[i] = t - nu
    return delay_arr, alarms_arr, cens_arr


def overshoots(int fam, coef_in, source, const double[::1] a_grid, uint64_t seed, uint64_t stream,
               uint64_t start, Py_ssize_t n, int64_t cap):
    cdef double[::1] coef_v = np.ascontiguousarray(coef_in, dtype=np.float64)
    cdef const double* coef = &coef_v[0]
    cdef Py_ssize_t m = a_grid.shape[0], i, gidx
    out_arr = np.full((n, m), np.nan)
    cdef double[:, ::1] out = out_arr
    cdef rng_t g
    cdef double s
    cdef int64_t t
    with nogil:
        for i in range(n):
            seed_rng(&g, seed, stream, start + i)
            s = 0.0
            gidx = 0
            t = 0
            while gidx < m and t < cap:
                t += 1
                s += draw(&g, fam, coef, 1)
                while gidx < m and s >= a_grid[gidx]:
                    out[i, gidx] = s - a_grid[gidx]
                    gidx += 1
    return out_arr


def exp_series(int fam, coef_in, source, bint post_regime, double sign, Py_ssize_t J, uint64_t seed,
               uint64_t stream, uint64_t start, Py_ssize_t n):
    cdef double[::1] coef_v = np.ascontiguousarray(coef_in, dtype=np.float64)
    cdef const double* coef = &coef_v[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef rng_t g
    cdef double s, acc, e
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            seed_rng(&g, seed, stream, start + i)
            s = 0.0
            acc = 0.0
            for j in range(J):
                s += draw(&g, fam, coef, post_regime)
                e = sign * s
                acc += SAT if e > EXP_GUARD else exp(e)
            out[i] = acc
    return out_arr


def survivor_states(spec, int64_t n_cond, uint64_t seed, uint64_t stream, uint64_t start, Py_ssize_t n):
    cdef _Spec s = _Spec(spec)
    out_arr = np.full(n, np.nan)
    cdef double[::1] out = out_arr
    cdef rng_t g, gi
    cdef double r
    cdef int64_t t
    cdef bint alive
    cdef Py_ssize_t i
    cdef const double* coef = &s.coef[0]
    with nogil:
        for i in range(n):
            seed_rng(&g, seed, stream, start + i)
            seed_rng(&gi, seed, stream + INIT_OFFSET, start + i)
            r = init_stat(&s.det, &gi)
            alive = 1
            for t in range(n_cond):
                r = step(&s.det, r, draw(&g, s.fam, coef, 0))
                if r >= s.det.thr:
                    alive = 0
                    break
            if alive:
                out[i] = r
    return out_arr


def stat_path(spec, Py_ssize_t n_steps, uint64_t seed, uint64_t stream):
    cdef _Spec s = _Spec(spec)
    out_arr = np.empty(n_steps, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef rng_t g, gi
    cdef double r
    cdef Py_ssize_t t
    cdef const double* coef = &s.coef[0]
    with nogil:
        seed_rng(&g, seed, stream, 0)
        seed_rng(&gi, seed, stream + INIT_OFFSET, 0)
        r = init_stat(&s.det, &gi)
        for t in range(n_steps):
            r = step(&s.det, r, draw(&g, s.fam, coef, 0))
            out[t] = r
    return out_arr
