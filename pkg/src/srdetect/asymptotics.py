"""Renewal-theoretic constants, head-start design and threshold calibration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _backend
from ._pykernels import _drawer
from .detectors import Procedure
from .metrics import OperatingCharacteristics, _mean_se, estimate_arl
from .model import ChangePointModel, ModelConfigError
from .quasistationary import DiscretizedDistribution, solve_stationary
from .rng import PATH, SERIES, WALK, Stream

DEFAULT_A_GRID = (5.0, 10.0, 20.0, 40.0)
SERIES_TAIL_TOL = 1e-6


class ArithmeticModelError(ValueError):
    """Overshoot constants are undefined for lattice log-likelihood ratios."""


class CalibrationError(RuntimeError):
    pass


@dataclass
class OvershootEstimate:
    kappa: float
    kappa_se: float
    zeta: float
    zeta_se: float
    a_grid: np.ndarray
    kappa_by_a: np.ndarray
    zeta_by_a: np.ndarray
    se_kappa_by_a: np.ndarray
    se_zeta_by_a: np.ndarray
    stable: bool


def estimate_overshoot_constants(model: ChangePointModel, a_grid=DEFAULT_A_GRID, replications: int = 100_000,
                                 seed: int = 0, cap: int = 10 ** 7) -> OvershootEstimate:
    """Mean overshoot and mean ``exp(-overshoot)`` of the post-change log-LR walk.

    One walk per replication is reused across all levels. Values at the largest
    level are reported; ``stable`` says whether the two largest levels agree
    within three combined standard errors.
    """
    if model.arithmetic:
        raise ArithmeticModelError(f"{model.name}: log LR is arithmetic, so the overshoot has no "
                                   "limiting law and the constants are undefined")
    a_grid = np.asarray(sorted(a_grid), dtype=float)
    K = _backend.overshoots(model, a_grid, seed, WALK, 0, replications, cap)
    if np.isnan(K).any():
        raise RuntimeError("some walks never crossed the largest level; increase cap")
    E = np.exp(-K)
    km, ks = K.mean(axis=0), K.std(axis=0, ddof=1) / math.sqrt(replications)
    zm, zs = E.mean(axis=0), E.std(axis=0, ddof=1) / math.sqrt(replications)
    stable = True
    if len(a_grid) > 1:
        stable = (abs(km[-1] - km[-2]) <= 3 * math.hypot(ks[-1], ks[-2])
                  and abs(zm[-1] - zm[-2]) <= 3 * math.hypot(zs[-1], zs[-2]))
    return OvershootEstimate(float(km[-1]), float(ks[-1]), float(zm[-1]), float(zs[-1]),
                             a_grid, km, zm, ks, zs, bool(stable))


def kl_number(model: ChangePointModel, replications: int = 100_000, seed: int = 0) -> OperatingCharacteristics:
    """Mean post-change log LR; raises if it is not positive beyond 3 standard errors."""
    draw = _drawer(model.family_code, _backend.model_coef(model), model, True)
    s = Stream(seed, PATH, 7)
    x = np.fromiter((draw(s) for _ in range(replications)), dtype=float, count=replications)
    est, se = _mean_se(x)
    if not est > 3 * se or est <= 0:
        raise ModelConfigError(f"{model.name}: information number {est:.4g} (se {se:.2g}) is not positive; "
                               "pre- and post-change laws coincide")
    closed = model.kl_closed_form(post=True)
    flags = ()
    if closed is not None and abs(est - closed) > 4 * se:
        flags = ("closed-form-mismatch",)
    return OperatingCharacteristics("kl", est, se, replications, 0.0, "", model.name, math.nan, flags,
                                    {"closed_form": closed})


def default_series_cap(I: float) -> int:
    """Smallest ``J`` with ``exp(-I J) / (1 - exp(-I)) < 1e-6``."""
    return int(math.ceil(math.log(1.0 / (SERIES_TAIL_TOL * (1.0 - math.exp(-I)))) / I))


@dataclass
class CConstants:
    c_inf: float
    c_inf_se: float
    r_grid: np.ndarray
    c_r: np.ndarray
    c_r_se: np.ndarray
    series_cap: int
    replications: int

    def c_of(self, r: float) -> float:
        if r < self.r_grid[0] or r > self.r_grid[-1]:
            raise ValueError(f"r={r} outside the tabulated range")
        return float(np.interp(r, self.r_grid, self.c_r))


def default_r_grid(r_max: float = 100.0) -> np.ndarray:
    return np.unique(np.concatenate([np.linspace(0, 10, 1001), np.linspace(10, r_max, 451)]))


def draw_v_tilde(model, series_cap, replications, seed):
    """Truncated ``sum_{j<=J} exp(-S_j)`` of the post-change log-LR walk."""
    return _backend.exp_series(model, True, -1.0, series_cap, seed, SERIES, 0, replications)


def draw_r_infinity(model, series_cap, replications, seed):
    """Truncated ``sum_{k<=J} prod_{j<=k} LR_j`` under no change; same law as the
    stationary SR statistic (time reversal)."""
    return _backend.exp_series(model, False, 1.0, series_cap, seed, SERIES + 1, 0, replications)


def estimate_c_constants(model: ChangePointModel, q_st: Optional[DiscretizedDistribution] = None,
                         series_cap: Optional[int] = None, replications: int = 100_000, seed: int = 0,
                         r_grid=None, kl: Optional[float] = None) -> CConstants:
    """``C_inf = E log(1 + R_inf + V)`` and ``C(r) = E log(1 + r + V)``.

    ``R_inf`` follows the stationary law ``q_st`` and ``V`` the post-change
    series, independently. Both use the same ``V`` draws, so
    ``C(0) <= C_inf`` holds exactly.
    """
    if q_st is None:
        q_st = solve_stationary(model)
    if kl is None:
        kl = model.kl_closed_form(post=True) or kl_number(model, seed=seed).estimate
    J = series_cap or default_series_cap(kl)
    V = draw_v_tilde(model, J, replications, seed)
    # E over R_inf of log(1 + x + y), tabulated in y and interpolated in log(1 + y)
    y_grid = np.concatenate([[0.0], np.geomspace(max(V.min(), 1e-12), max(V.max(), 1e-11), 800)])
    h = np.array([q_st.expect(lambda x, y=y: np.log1p(x + y)) for y in y_grid])
    hv = np.interp(np.log1p(V), np.log1p(y_grid), h)
    c_inf, c_inf_se = _mean_se(hv)
    r_grid = default_r_grid() if r_grid is None else np.asarray(r_grid, dtype=float)
    c_r = np.empty(len(r_grid))
    c_se = np.empty(len(r_grid))
    for i, r in enumerate(r_grid):
        c_r[i], c_se[i] = _mean_se(np.log1p(r + V))
    return CConstants(c_inf, c_inf_se, r_grid, c_r, c_se, J, replications)


def solve_r_star(c_table: CConstants, c_inf: Optional[float] = None) -> float:
    """Head start ``r*`` with ``C(r*) = C_inf`` by monotone interpolation of the table."""
    c_inf = c_table.c_inf if c_inf is None else c_inf
    c, r = c_table.c_r, c_table.r_grid
    if np.any(np.diff(c) <= 0):
        raise ValueError("C(r) table is not strictly increasing")
    if c_inf <= c[0]:
        if c[0] - c_inf > 1e-9:
            raise ValueError(f"C_inf={c_inf:.6g} lies below C(0)={c[0]:.6g}")
        return 0.0
    if c_inf > c[-1]:
        raise ValueError(f"C_inf={c_inf:.6g} exceeds C(r_max)={c[-1]:.6g}; extend the r grid")
    return float(np.interp(c_inf, c, r))


@dataclass
class AsymptoticConstants:
    model: str
    kappa: float
    kappa_se: float
    zeta: float
    zeta_se: float
    kl: float
    kl_se: float
    c_inf: float
    c_inf_se: float
    r_star: float
    c_table: CConstants = field(repr=False)

    def c_of(self, r: float) -> float:
        return self.c_table.c_of(r)

    def to_json(self) -> dict:
        keep = np.unique(np.concatenate([np.arange(0, len(self.c_table.r_grid), 10),
                                         [len(self.c_table.r_grid) - 1]]))
        return {
            "model": self.model,
            "kappa": self.kappa, "kappa_se": self.kappa_se,
            "zeta": self.zeta, "zeta_se": self.zeta_se,
            "I": self.kl, "I_se": self.kl_se,
            "C_inf": self.c_inf, "C_inf_se": self.c_inf_se,
            "C_r": {"r": self.c_table.r_grid[keep].tolist(), "C": self.c_table.c_r[keep].tolist(),
                    "se": self.c_table.c_r_se[keep].tolist()},
            "r_star": self.r_star,
            "series_cap": self.c_table.series_cap,
        }


def estimate_constants(model: ChangePointModel, replications: int = 100_000, seed: int = 0,
                       a_grid=DEFAULT_A_GRID) -> AsymptoticConstants:
    ov = estimate_overshoot_constants(model, a_grid, replications, seed)
    kl = kl_number(model, replications, seed)
    I = kl.details["closed_form"] or kl.estimate
    cc = estimate_c_constants(model, None, None, replications, seed, kl=I)
    return AsymptoticConstants(model.name, ov.kappa, ov.kappa_se, ov.zeta, ov.zeta_se, I,
                               0.0 if kl.details["closed_form"] else kl.std_error,
                               cc.c_inf, cc.c_inf_se, solve_r_star(cc), cc)


def asymptotic_sadd(constants: AsymptoticConstants, A: float, r: Optional[float] = None) -> float:
    """First-order expansion of the delay: ``ADD_inf`` when ``r`` is None, else ``ADD_0`` of SR-r.

    Accurate up to o(1) as ``A`` grows.
    """
    c = constants.c_inf if r is None else constants.c_of(r)
    return (math.log(A) + constants.kappa - c) / constants.kl


@dataclass
class Calibration:
    threshold: float
    arl: OperatingCharacteristics
    history: list

    def __float__(self):
        return self.threshold


def _initial_guess(procedure, model, gamma, zeta):
    if procedure.kind == "cusum":
        return gamma
    if procedure.kind == "sr_r":
        return zeta * (gamma + procedure.r)
    return zeta * gamma


def calibrate(procedure: Procedure, model: ChangePointModel, gamma: float, tol: float = 0.02,
              replications: int = 10_000, seed: int = 0, zeta: Optional[float] = None,
              max_iter: int = 80, workers: int = 1) -> Calibration:
    """Threshold whose Monte Carlo ARL is within ``tol`` (relative) of ``gamma``.

    All probes reuse the same random numbers, so the estimated ARL is
    nondecreasing in the threshold and bisection on ``log A`` is well posed.
    """
    if gamma <= 1:
        raise ValueError("gamma must exceed 1")
    if zeta is None:
        if model.arithmetic:
            zeta = 0.5
        else:
            zeta = estimate_overshoot_constants(model, replications=20_000, seed=seed).zeta
    history = []

    def arl(A):
        oc = estimate_arl(procedure, A, model, replications, seed, workers=workers)
        history.append((A, oc.estimate))
        return oc

    def ok(oc):
        return abs(oc.estimate - gamma) / gamma <= tol

    A = _initial_guess(procedure, model, gamma, zeta)
    oc = arl(A)
    if ok(oc):
        return Calibration(A, oc, history)
    lo = hi = None
    step = 2.0
    for _ in range(40):
        if oc.estimate < gamma:
            lo = (A, oc)
            if hi is not None:
                break
            A *= step
        else:
            hi = (A, oc)
            if lo is not None:
                break
            A /= step
        oc = arl(A)
        if ok(oc):
            return Calibration(A, oc, history)
    if lo is None or hi is None:
        raise CalibrationError(f"could not bracket ARL={gamma} for {procedure.name}; probes: {history[-5:]}")
    for _ in range(max_iter):
        A = math.sqrt(lo[0] * hi[0])
        oc = arl(A)
        if ok(oc):
            return Calibration(A, oc, history)
        if oc.estimate < gamma:
            lo = (A, oc)
        else:
            hi = (A, oc)
        if hi[0] / lo[0] - 1 < 1e-12:
            break
    raise CalibrationError(f"ARL for {procedure.name} jumps across {gamma} between A={lo[0]:.6g} "
                           f"and A={hi[0]:.6g}; use more replications")


def calibrate_threshold(procedure: Procedure, model: ChangePointModel, gamma: float, tol: float = 0.02,
                        **kw) -> float:
    return calibrate(procedure, model, gamma, tol, **kw).threshold
