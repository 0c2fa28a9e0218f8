"""Pure-Python simulation kernels.

Reference implementation of the hot loops; ``_ckernels.pyx`` mirrors it line
for line and must produce bit-identical output. Also the only backend able to
run models defined by arbitrary Python callables (``family == -1``).
"""
from __future__ import annotations

import math
from bisect import bisect_right

import numpy as np

from .rng import INIT_OFFSET, Stream

SATURATION = 1e300
EXP_GUARD = 709.0
NU_INF = 2 ** 62
SUFFIX_XOR = 0x5555

LINEAR = 0
CUSUM = 1


def _drawer(fam, coef, source, post):
    """Return a function ``rng -> log LR`` for one regime."""
    if fam == 0:
        mu, sigma, a, b = (coef[1] if post else coef[0]), coef[2], coef[3], coef[4]
        return lambda rng: a * (mu + sigma * rng.normal()) + b
    if fam == 1:
        lam, d, c = (coef[1] if post else coef[0]), coef[3], coef[4]
        return lambda rng: c - d * (rng.exponential() / lam)
    if fam == 2:
        q, l1, l0 = (coef[1] if post else coef[0]), coef[3], coef[4]
        return lambda rng: l1 if rng.uniform() < q else l0
    if fam == 3:
        c = coef[1] if post else coef[0]
        return lambda rng: c
    sampler = source.post_sampler if post else source.pre_sampler
    llr = source.log_lr
    return lambda rng: llr(sampler(rng))


class _Detector:
    __slots__ = ("kind", "scale", "thr", "init_mode", "r0", "edges", "cdf")

    def __init__(self, spec):
        self.kind = spec.kind
        self.scale = spec.scale
        self.thr = spec.thr
        self.init_mode = spec.init_mode
        self.r0 = spec.r0
        self.edges = list(spec.q_edges)
        self.cdf = list(spec.q_cdf)

    def step(self, r, l):
        if self.kind == LINEAR:
            if l > EXP_GUARD:
                return SATURATION
            r = (1.0 + r) * math.exp(l) * self.scale
            return SATURATION if r > SATURATION else r
        r = r + l
        return 0.0 if r < 0.0 else r

    def init(self, rng):
        if self.init_mode == 0:
            return self.r0
        cdf, edges = self.cdf, self.edges
        nb = len(edges) - 1
        j = bisect_right(cdf, rng.uniform()) - 1
        if j < 0:
            j = 0
        elif j > nb - 1:
            j = nb - 1
        lo, hi = edges[j], edges[j + 1]
        u = rng.uniform()
        if hi == math.inf:
            return lo
        return lo + u * (hi - lo)


def run_lengths(spec, nu, seed, stream, start, cap):
    det = _Detector(spec)
    pre = _drawer(spec.fam, spec.coef, spec.source, False)
    post = _drawer(spec.fam, spec.coef, spec.source, True)
    n = len(nu)
    T = np.empty(n, dtype=np.int64)
    cens = np.zeros(n, dtype=np.uint8)
    thr = det.thr
    for i in range(n):
        rng = Stream(seed, stream, start + i)
        r = det.init(Stream(seed, stream + INIT_OFFSET, start + i))
        v = nu[i]
        t = 0
        stopped = False
        while t < cap:
            t += 1
            r = det.step(r, post(rng) if t > v else pre(rng))
            if r >= thr:
                stopped = True
                break
        T[i] = t
        cens[i] = 0 if stopped else 1
    return T, cens


def _suffix(det, r, post, rng, cap):
    thr = det.thr
    j = 0
    while j < cap:
        j += 1
        r = det.step(r, post(rng))
        if r >= thr:
            return j, False
    return j, True


def spliced_sum(spec, seed, stream, start, n, cap):
    """Per replication: ``T`` under no change and ``sum_{k<T} (T_k - k)`` where
    ``T_k`` restarts the post-change regime from the prefix state at ``k``."""
    det = _Detector(spec)
    pre = _drawer(spec.fam, spec.coef, spec.source, False)
    post = _drawer(spec.fam, spec.coef, spec.source, True)
    T = np.empty(n, dtype=np.int64)
    cens = np.zeros(n, dtype=np.uint8)
    total = np.empty(n, dtype=np.float64)
    first = np.empty(n, dtype=np.float64)
    scens = np.zeros(n, dtype=np.int64)
    thr = det.thr
    for i in range(n):
        rng = Stream(seed, stream, start + i)
        srng = Stream(seed, stream ^ SUFFIX_XOR, start + i)
        r = det.init(Stream(seed, stream + INIT_OFFSET, start + i))
        k = 0
        acc = 0.0
        while True:
            d, c = _suffix(det, r, post, srng, cap)
            acc += d
            if k == 0:
                first[i] = d
            if c:
                scens[i] += 1
            k += 1
            r = det.step(r, pre(rng))
            if r >= thr:
                break
            if k >= cap:
                cens[i] = 1
                break
        T[i] = k
        total[i] = acc
    return T, cens, total, first, scens


def spliced_grid(spec, grid, seed, stream, start, n, cap):
    """Delays ``T - nu`` for each ``nu`` in ``grid`` (``-1`` where ``T <= nu``)."""
    det = _Detector(spec)
    pre = _drawer(spec.fam, spec.coef, spec.source, False)
    post = _drawer(spec.fam, spec.coef, spec.source, True)
    m = len(grid)
    out = np.full((n, m), -1, dtype=np.int64)
    scens = np.zeros(n, dtype=np.int64)
    thr = det.thr
    last = grid[m - 1]
    for i in range(n):
        rng = Stream(seed, stream, start + i)
        srng = Stream(seed, stream ^ SUFFIX_XOR, start + i)
        r = det.init(Stream(seed, stream + INIT_OFFSET, start + i))
        k = 0
        g = 0
        while True:
            if k == grid[g]:
                d, c = _suffix(det, r, post, srng, cap)
                out[i, g] = d
                if c:
                    scens[i] += 1
                g += 1
                if g == m:
                    break
            if k >= last:
                break
            k += 1
            r = det.step(r, pre(rng))
            if r >= thr:
                break
    return out, scens


def multicyclic(spec, nu, seed, stream, start, n, cap):
    """Repeated application of the rule with restarts after each false alarm."""
    det = _Detector(spec)
    pre = _drawer(spec.fam, spec.coef, spec.source, False)
    post = _drawer(spec.fam, spec.coef, spec.source, True)
    delay = np.empty(n, dtype=np.int64)
    alarms = np.zeros(n, dtype=np.int64)
    cens = np.zeros(n, dtype=np.uint8)
    thr = det.thr
    for i in range(n):
        rng = Stream(seed, stream, start + i)
        irng = Stream(seed, stream + INIT_OFFSET, start + i)
        r = det.init(irng)
        t = 0
        while True:
            t += 1
            r = det.step(r, post(rng) if t > nu else pre(rng))
            if r >= thr:
                if t > nu:
                    break
                alarms[i] += 1
                r = det.init(irng)
            elif t - nu >= cap:
                cens[i] = 1
                break
        delay[i] = t - nu
    return delay, alarms, cens


def overshoots(fam, coef, source, a_grid, seed, stream, start, n, cap):
    """Overshoot ``S_tau - a`` of the post-change log-LR walk over each level."""
    post = _drawer(fam, coef, source, True)
    m = len(a_grid)
    out = np.full((n, m), np.nan)
    for i in range(n):
        rng = Stream(seed, stream, start + i)
        s = 0.0
        g = 0
        t = 0
        while g < m and t < cap:
            t += 1
            s += post(rng)
            while g < m and s >= a_grid[g]:
                out[i, g] = s - a_grid[g]
                g += 1
    return out


def exp_series(fam, coef, source, post_regime, sign, J, seed, stream, start, n):
    """``sum_{j=1}^J exp(sign * S_j)`` for the log-LR walk in the chosen regime."""
    draw = _drawer(fam, coef, source, post_regime)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        rng = Stream(seed, stream, start + i)
        s = 0.0
        acc = 0.0
        for _ in range(J):
            s += draw(rng)
            e = sign * s
            acc += SATURATION if e > EXP_GUARD else math.exp(e)
        out[i] = acc
    return out


def survivor_states(spec, n_cond, seed, stream, start, n):
    """Statistic after ``n_cond`` pre-change steps, NaN if an alarm came first."""
    det = _Detector(spec)
    pre = _drawer(spec.fam, spec.coef, spec.source, False)
    out = np.full(n, np.nan)
    thr = det.thr
    for i in range(n):
        rng = Stream(seed, stream, start + i)
        r = det.init(Stream(seed, stream + INIT_OFFSET, start + i))
        alive = True
        for _ in range(n_cond):
            r = det.step(r, pre(rng))
            if r >= thr:
                alive = False
                break
        if alive:
            out[i] = r
    return out


def stat_path(spec, n_steps, seed, stream):
    """Untruncated pre-change path of the statistic (threshold ignored)."""
    det = _Detector(spec)
    pre = _drawer(spec.fam, spec.coef, spec.source, False)
    rng = Stream(seed, stream, 0)
    r = det.init(Stream(seed, stream + INIT_OFFSET, 0))
    out = np.empty(n_steps, dtype=np.float64)
    for t in range(n_steps):
        r = det.step(r, pre(rng))
        out[t] = r
    return out
