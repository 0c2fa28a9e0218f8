"""Quasi-stationary and stationary laws of the SR statistic under no change.

Both are computed by power iteration on a discretised one-step kernel
``K(x, dy) = P_inf((1 + x) LR in dy)``, truncated to ``[0, A)`` for the
quasi-stationary law and extended with an overflow bin for the stationary law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from . import _backend
from ._pykernels import LINEAR
from .rng import PATH, PRE, Stream

DEFAULT_GRID = 2048
DEFAULT_TOL = 1e-10
MAX_ITER = 100_000
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(4)
_EMPIRICAL_DRAWS = 200_000


class NonConvergenceError(RuntimeError):
    def __init__(self, message, residual=math.nan):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class DiscretizedDistribution:
    """Masses on bins ``[edges[j], edges[j+1])``; a last edge of ``inf`` marks an overflow bin.

    Within a bin the law is taken as uniform, both for moments and sampling.
    """

    edges: np.ndarray
    masses: np.ndarray
    method: str
    threshold: Optional[float] = None
    eigenvalue: Optional[float] = None
    iterations: int = 0
    residuals: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if len(self.edges) != len(self.masses) + 1:
            raise ValueError("need one more edge than masses")
        if np.any(self.masses < 0):
            raise ValueError("masses must be nonnegative")
        if abs(self.masses.sum() - 1.0) > 1e-9:
            raise ValueError(f"masses sum to {self.masses.sum()!r}, not 1")

    @property
    def cdf(self) -> np.ndarray:
        c = np.concatenate([[0.0], np.cumsum(self.masses)])
        c[-1] = 1.0
        return c

    @property
    def midpoints(self) -> np.ndarray:
        e = self.edges
        mid = 0.5 * (e[:-1] + e[1:])
        if math.isinf(e[-1]):
            mid[-1] = e[-2]
        return mid

    @property
    def overflow_mass(self) -> float:
        return float(self.masses[-1]) if math.isinf(self.edges[-1]) else 0.0

    def mean(self) -> float:
        if self.overflow_mass > 0:
            return math.inf
        return float(self.masses @ self.midpoints)

    def expect(self, fn) -> float:
        """``E[fn(X)]`` with a 4-point Gauss-Legendre rule inside each finite bin."""
        e = self.edges
        finite = np.isfinite(e[1:])
        lo, hi = e[:-1][finite], e[1:][finite]
        half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
        vals = sum(w * fn(mid + half * x) for x, w in zip(_NODES, _WEIGHTS)) / 2.0
        total = float(self.masses[finite] @ vals)
        if not finite.all():
            total += self.overflow_mass * float(fn(np.array([e[-2]]))[0])
        return total

    def cdf_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        e, c = self.edges, self.cdf
        j = np.clip(np.searchsorted(e, x, side="right") - 1, 0, len(self.masses) - 1)
        lo, hi = e[j], e[j + 1]
        with np.errstate(invalid="ignore"):
            frac = np.where(np.isfinite(hi), (x - lo) / (hi - lo), 0.0)
        out = c[j] + self.masses[j] * np.clip(frac, 0.0, 1.0)
        return np.where(x < e[0], 0.0, out)

    def sample(self, rng: Stream) -> float:
        """Inverse-CDF draw with uniform jitter inside the selected bin."""
        spec = _backend.make_spec_table(self)
        return _backend._pykernels._Detector(spec).init(rng)

    def ks_distance(self, samples) -> float:
        x = np.sort(np.asarray(samples, dtype=float))
        n = len(x)
        F = self.cdf_at(x)
        i = np.arange(1, n + 1)
        return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))

    def histogram_of(self, samples, method="conditioned-simulation") -> "DiscretizedDistribution":
        counts, _ = np.histogram(np.clip(samples, self.edges[0], _finite_top(self.edges)), bins=_hist_edges(self.edges))
        return DiscretizedDistribution(self.edges.copy(), counts / counts.sum(), method, self.threshold)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# method={self.method}\n")
            fh.write(f"# threshold={'' if self.threshold is None else repr(float(self.threshold))}\n")
            fh.write(f"# eigenvalue={'' if self.eigenvalue is None else repr(float(self.eigenvalue))}\n")
            fh.write("bin_edge,mass\n")
            for e, m in zip(self.edges[:-1], self.masses):
                fh.write(f"{float(e)!r},{float(m)!r}\n")
            fh.write(f"{float(self.edges[-1])!r},\n")

    @classmethod
    def from_csv(cls, path) -> "DiscretizedDistribution":
        meta, edges, masses = {}, [], []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    meta[k] = v
                    continue
                if not line or line.startswith("bin_edge"):
                    continue
                e, _, m = line.partition(",")
                edges.append(float(e))
                if m:
                    masses.append(float(m))
        masses = np.array(masses)
        masses /= masses.sum()
        return cls(np.array(edges), masses, meta.get("method", "imported"),
                   float(meta["threshold"]) if meta.get("threshold") else None,
                   float(meta["eigenvalue"]) if meta.get("eigenvalue") else None)


def _finite_top(edges):
    return edges[-2] if math.isinf(edges[-1]) else np.nextafter(edges[-1], 0.0)


def _hist_edges(edges):
    e = edges.copy()
    if math.isinf(e[-1]):
        e[-1] = np.nextafter(e[-2], np.inf) * 2 + 1
    return e


def mean(dist: DiscretizedDistribution) -> float:
    return dist.mean()


def sample(dist: DiscretizedDistribution, rng: Stream) -> float:
    return dist.sample(rng)


def quasi_stationary_edges(A: float, grid_size: int, lo: float = 1e-8) -> np.ndarray:
    """Log-spaced bins from ``lo`` to a switch point, equal-width bins from there to ``A``.

    The switch point makes the last log-spaced bin and the equal-width bins
    about the same width.
    """
    n_geo = grid_size // 2
    n_lin = grid_size - n_geo
    if A <= 10 * lo:
        return np.linspace(0.0, A, grid_size + 1)
    h = lambda x: x * math.log(x / lo) / n_geo - (A - x) / n_lin
    xs = optimize.brentq(h, lo * math.e, A) if h(lo * math.e) < 0 < h(A) else A / 2
    geo = np.geomspace(lo, xs, n_geo)
    lin = np.linspace(xs, A, n_lin + 1)[1:]
    return np.concatenate([[0.0], geo, lin])


def stationary_edges(grid_size: int, lo: float = 1e-10, cap: float = 1e10) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(lo, cap, grid_size - 1), [math.inf]])


def _log_lr_cdf(model):
    """CDF of the pre-change log LR: closed form for built-in families, else empirical."""
    if model.family is not None:
        return lambda y: model.log_lr_cdf(y, post=False)
    s = Stream(0, PATH, 99)
    draws = np.sort([model.log_lr(model.pre_sampler(s)) for _ in range(_EMPIRICAL_DRAWS)])
    return lambda y: np.searchsorted(draws, y, side="right") / len(draws)


def _kernel_matrix(model, edges, overflow: bool) -> np.ndarray:
    """Row-stochastic (or sub-stochastic) transition matrix between bins."""
    F = _log_lr_cdf(model)
    nb = len(edges) - 1
    finite = edges[:-1] if overflow else edges
    with np.errstate(divide="ignore"):
        log_e = np.log(finite)
    K = np.zeros((nb, nb))
    lo, hi = edges[:-1].copy(), edges[1:].copy()
    if overflow:
        # overflow bin evaluated at one point just past the last finite edge
        ratio = edges[-2] / edges[-3]
        lo[-1] = hi[-1] = edges[-2] * ratio
    for x, w in zip(_NODES, _WEIGHTS):
        pts = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
        Fm = F(log_e[None, :] - np.log1p(pts)[:, None])
        Fm[:, 0] = 0.0
        block = np.diff(Fm, axis=1)
        if overflow:
            block = np.concatenate([block, 1.0 - Fm[:, -1:]], axis=1)
        K += 0.5 * w * block
    return np.clip(K, 0.0, None)


def _power_iterate(K, tol, max_iter):
    v = np.full(K.shape[0], 1.0 / K.shape[0])
    residuals = []
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = v @ K
        lam = w.sum()
        if lam <= 0:
            raise NonConvergenceError("kernel annihilated all mass", math.inf)
        w /= lam
        res = 0.5 * np.abs(w - v).sum()
        residuals.append(res)
        v = w
        if res < tol:
            return v, lam, it, residuals
    raise NonConvergenceError(f"power iteration did not converge in {max_iter} iterations "
                              f"(last residual {residuals[-1]:.3g})", residuals[-1])


_QSD_CACHE: dict = {}


def solve_quasi_stationary(model, A: float, grid_size: int = DEFAULT_GRID, tol: float = DEFAULT_TOL,
                           max_iter: int = MAX_ITER) -> DiscretizedDistribution:
    """Quasi-stationary law of the SR statistic below threshold ``A``.

    Left principal eigenvector of the kernel restricted to ``[0, A)``. The
    eigenvalue is the per-step survival probability in the quasi-stationary
    regime, so ``1 / (1 - eigenvalue)`` is the ARL of the SRP rule on this grid.
    """
    if A <= 0:
        raise ValueError("threshold must be positive")
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    key = (model.key, float(A), grid_size, tol) if model.family is not None else None
    if key is not None and key in _QSD_CACHE:
        return _QSD_CACHE[key]
    edges = quasi_stationary_edges(A, grid_size)
    K = _kernel_matrix(model, edges, overflow=False)
    v, lam, it, res = _power_iterate(K, tol, max_iter)
    dist = DiscretizedDistribution(edges, v, "power-iteration", float(A), float(lam), it, tuple(res))
    if key is not None:
        _QSD_CACHE[key] = dist
    return dist


def solve_stationary(model, grid_size: int = DEFAULT_GRID, tol: float = DEFAULT_TOL,
                     max_iter: int = MAX_ITER, cap: float = 1e10,
                     overflow_tol: float = 1e-3) -> DiscretizedDistribution:
    """Stationary law of the untruncated SR statistic under no change.

    It exists only when the pre-change log LR has negative mean; the top bin
    collects mass above ``cap`` and is represented by a point just above it.
    """
    drift = model.kl_closed_form(post=False)
    if drift is not None and drift <= 0:
        raise NonConvergenceError("pre-change log LR has nonnegative mean; the SR statistic "
                                  "drifts to infinity and has no stationary law", math.inf)
    edges = stationary_edges(grid_size, cap=cap)
    K = _kernel_matrix(model, edges, overflow=True)
    v, lam, it, res = _power_iterate(K, tol, max_iter)
    if v[-1] > overflow_tol:
        raise NonConvergenceError(f"{v[-1]:.3g} of the mass escaped past {cap:g}", res[-1])
    return DiscretizedDistribution(edges, v, "power-iteration", None, float(lam), it, tuple(res))


def simulate_quasi_stationary(model, A: float, n_cond: int, replications: int, seed: int,
                              edges: Optional[np.ndarray] = None):
    """Histogram of ``R_n`` at ``n = n_cond`` over runs with no alarm so far.

    Returns ``(distribution, samples)``.
    """
    spec = _backend.make_spec(model, LINEAR, 1.0, A)
    states = _backend.survivor_states(spec, n_cond, seed, PRE, 0, replications)
    samples = states[~np.isnan(states)]
    if len(samples) == 0:
        raise NonConvergenceError("no run survived the conditioning horizon")
    if edges is None:
        edges = quasi_stationary_edges(A, DEFAULT_GRID)
    counts, _ = np.histogram(samples, bins=edges)
    return DiscretizedDistribution(edges, counts / counts.sum(), "conditioned-simulation", float(A)), samples


def simulate_stationary_path(model, n_steps: int, burn_in: int, seed: int) -> np.ndarray:
    """Long pre-change path of the SR statistic after a burn-in."""
    spec = _backend.make_spec(model, LINEAR, 1.0, math.inf)
    return _backend.stat_path(spec, n_steps + burn_in, seed, PATH)[burn_in:]


def table_args(dist: DiscretizedDistribution) -> dict:
    return dict(init_mode=1, edges=dist.edges, cdf=dist.cdf)
