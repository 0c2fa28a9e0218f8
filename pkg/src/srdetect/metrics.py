"""Monte Carlo estimators of the detection performance criteria.

Every estimator draws replication ``i`` from random streams keyed by
``(seed, stream, i)``, so estimates do not depend on chunking or on the number
of worker threads. The same seed gives common random numbers across
procedures, which keeps procedure comparisons tight.

Lorden's essential-supremum delay is not estimated; only Pollak's SADD is
(the former always dominates it).
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import stats

from . import _backend
from ._pykernels import NU_INF
from .detectors import Procedure
from .model import ChangePointModel, GeometricPrior
from .quasistationary import DEFAULT_GRID, DiscretizedDistribution, solve_quasi_stationary
from .rng import BAYES, CYCLIC, POST, PRE

CENSOR_WARN = 1e-3
CHUNK = 1 << 15
DEFAULT_DELAY_REPS = 100_000
DEFAULT_ARL_REPS = 10_000


class EstimationError(RuntimeError):
    pass


@dataclass
class OperatingCharacteristics:
    criterion: str
    estimate: float
    std_error: float
    replications: int
    censored_fraction: float = 0.0
    procedure: str = ""
    model: str = ""
    threshold: float = math.nan
    flags: tuple = ()
    details: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.std_error >= 0 and not math.isnan(self.std_error):
            raise ValueError("standard error must be nonnegative")

    CSV_FIELDS = ("criterion", "procedure", "model", "threshold", "estimate", "std_error",
                  "replications", "censored_fraction")

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}


def write_characteristics_csv(path, rows: Sequence, header_lines=(), extra_fields=()) -> None:
    fields = list(OperatingCharacteristics.CSV_FIELDS) + list(extra_fields)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            d = r.row() if isinstance(r, OperatingCharacteristics) else r
            w.writerow({k: _fmt(d.get(k, "")) for k in fields})


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return v


def combined_se(*ses: float) -> float:
    return math.sqrt(sum(s * s for s in ses))


def default_cap(A: float) -> int:
    """Run-length cap: 1000 times a generous ARL guess for threshold ``A``."""
    return int(min(1000 * max(A, 10.0) * 2, 10 ** 9))


def qsd_for(model: ChangePointModel, A: float, grid_size: int = DEFAULT_GRID) -> DiscretizedDistribution:
    return solve_quasi_stationary(model, A, grid_size)


def kernel_spec(procedure: Procedure, model: ChangePointModel, A: float,
                qsd: Optional[DiscretizedDistribution] = None):
    """Kernel encoding of ``procedure`` at threshold ``A``; SRP solves its start law for ``A``."""
    args = procedure.kernel_args(A)
    if procedure.needs_qsd:
        if qsd is not None and qsd.threshold is not None and not math.isclose(qsd.threshold, A):
            warnings.warn(f"quasi-stationary law solved for A={qsd.threshold:g} used at A={A:g}; re-solving")
            qsd = None
        qsd = qsd or qsd_for(model, A)
        return _backend.make_spec(model, args["kind"], args["scale"], args["thr"], 1, 0.0, qsd.edges, qsd.cdf)
    return _backend.make_spec(model, args["kind"], args["scale"], args["thr"], 0, args["r0"])


def _map_chunks(fn, n: int, workers: int = 1):
    starts = list(range(0, n, CHUNK))
    jobs = [(s, min(CHUNK, n - s)) for s in starts]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda j: fn(*j), jobs))
    else:
        parts = [fn(*j) for j in jobs]
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(len(parts[0])))


def _mean_se(x) -> tuple:
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n == 0:
        return math.nan, math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf


def ratio_estimate(num, den) -> tuple:
    """``mean(num) / mean(den)`` with a delta-method standard error from paired samples."""
    num, den = np.asarray(num, float), np.asarray(den, float)
    n = len(num)
    mb = den.mean()
    R = num.mean() / mb
    resid = num - R * den
    return float(R), float(resid.std(ddof=1) / (math.sqrt(n) * abs(mb)))


def _censor_flags(frac, what="runs"):
    if frac > CENSOR_WARN:
        warnings.warn(f"{frac:.2%} of {what} hit the run cap; estimate is a lower bound")
        return ("censored",)
    return ()


def run_length_samples(procedure, A, model, replications, seed=0, cap=None, stream=PRE, workers=1):
    """Pre-change stopping times and censoring flags."""
    spec = kernel_spec(procedure, model, A)
    cap = cap or default_cap(A)
    nu = np.full(replications, NU_INF, dtype=np.int64)
    return _map_chunks(lambda s, c: _backend.run_lengths(spec, nu[s:s + c], seed, stream, s, cap),
                       replications, workers)


def estimate_arl(procedure: Procedure, A: float, model: ChangePointModel,
                 replications: int = DEFAULT_ARL_REPS, seed: int = 0, cap: Optional[int] = None,
                 workers: int = 1) -> OperatingCharacteristics:
    """Average run length to false alarm (mean stopping time with no change)."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    T, cens = run_length_samples(procedure, A, model, replications, seed, cap, workers=workers)
    est, se = _mean_se(T)
    frac = float(cens.mean())
    return OperatingCharacteristics("arl", est, se if replications > 1 else 0.0, replications, frac,
                                    procedure.name, model.name, A, _censor_flags(frac),
                                    {"samples": T})


class BayesCharacteristics(NamedTuple):
    pfa: OperatingCharacteristics
    add: OperatingCharacteristics
    survival: OperatingCharacteristics
    excess: OperatingCharacteristics


def estimate_bayes(procedure: Procedure, A: float, model: ChangePointModel, prior: GeometricPrior,
                   replications: int = DEFAULT_DELAY_REPS, seed: int = 0, cap: Optional[int] = None,
                   workers: int = 1) -> BayesCharacteristics:
    """PFA and ADD under a geometric prior on the change point.

    Also returns ``P(T > nu)`` and ``E[(T - nu)^+]`` so their ratios to ``p``
    can be compared with the ARL and the integral delay.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, BAYES])))
    nu = prior.sample(rng, replications)
    spec = kernel_spec(procedure, model, A)
    cap = cap or default_cap(A)
    T, cens = _map_chunks(lambda s, c: _backend.run_lengths(spec, nu[s:s + c], seed, BAYES, s, cap),
                          replications, workers)
    alarm_early = (T <= nu).astype(float)
    excess = np.maximum(T - nu, 0).astype(float)
    frac = float(cens.mean())
    flags = _censor_flags(frac)
    common = dict(replications=replications, censored_fraction=frac, procedure=procedure.name,
                  model=model.name, threshold=A, flags=flags)
    pfa = OperatingCharacteristics("pfa", *_mean_se(alarm_early), **common)
    surv = OperatingCharacteristics("survival", *_mean_se(1.0 - alarm_early), **common)
    exc = OperatingCharacteristics("excess_delay", *_mean_se(excess), **common)
    if surv.estimate == 0.0:
        raise EstimationError("no run outlived its change point; ADD undefined")
    add = OperatingCharacteristics("add", *ratio_estimate(excess, 1.0 - alarm_early), **common)
    return BayesCharacteristics(pfa, add, surv, exc)


@dataclass
class DelayCurve:
    """Conditional mean delays ``E_nu[T - nu | T > nu]`` on a grid of change points."""

    nu: np.ndarray
    add: np.ndarray
    se: np.ndarray
    counts: np.ndarray
    tail_add: float
    tail_se: float
    procedure: str = ""
    threshold: float = math.nan
    flags: tuple = ()
    model: str = ""

    def to_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["nu", "add", "se"])
            for v, a, s in zip(self.nu, self.add, self.se):
                w.writerow([int(v), repr(float(a)), repr(float(s))])
            if not math.isnan(self.tail_add):
                w.writerow(["inf", repr(float(self.tail_add)), repr(float(self.tail_se))])


def default_nu_grid(arl: float) -> np.ndarray:
    """``0..10`` then ``20, 50, 100, 200, 500, ...`` up to twice the ARL."""
    grid = list(range(11))
    decade = 10
    while True:
        for v in (2 * decade, 5 * decade, 10 * decade):
            if v > 2 * arl:
                return np.array(grid, dtype=np.int64)
            grid.append(v)
        decade *= 10


MIN_SURVIVORS = 30


def estimate_delay_curve(procedure: Procedure, A: float, model: ChangePointModel, nu_grid=None,
                         replications: int = DEFAULT_DELAY_REPS, seed: int = 0, cap: Optional[int] = None,
                         tail: bool = True, workers: int = 1) -> DelayCurve:
    """Delay curve with the change-point-at-infinity value as its tail.

    Each replication runs one pre-change path and restarts an independent
    post-change suffix from the path state at every grid point it survives.
    For SR-family rules the tail ``ADD_inf`` is the post-change delay of the
    rule started from the quasi-stationary law; other rules get no tail value.
    """
    cap = cap or default_cap(A)
    if nu_grid is None:
        nu_grid = default_nu_grid(A / 0.5)  # A / zeta overestimates the ARL for zeta >= 0.5
    nu_grid = np.asarray(nu_grid, dtype=np.int64)
    if np.any(np.diff(nu_grid) <= 0) or nu_grid[0] < 0:
        raise ValueError("nu_grid must be sorted, distinct and nonnegative")
    spec = kernel_spec(procedure, model, A)
    D, scens = _map_chunks(lambda s, c: _backend.spliced_grid(spec, nu_grid, seed, PRE, s, c, cap),
                           replications, workers)
    m = len(nu_grid)
    add, se, counts = np.empty(m), np.empty(m), np.empty(m, dtype=np.int64)
    flags = []
    for j in range(m):
        d = D[:, j][D[:, j] >= 0]
        counts[j] = len(d)
        add[j], se[j] = _mean_se(d) if len(d) > 1 else (math.nan, math.inf)
        if 1 < len(d) < MIN_SURVIVORS:
            se[j] *= stats.t.ppf(0.975, len(d) - 1) / stats.norm.ppf(0.975)
    if np.any(counts < MIN_SURVIVORS):
        flags.append("few-survivors")
    if scens.sum():
        flags.append("censored")
    tail_add = tail_se = math.nan
    if tail and procedure.kind in ("sr", "sr_r", "srp"):
        tail_add, tail_se = _add_infinity(model, A, procedure, replications, seed, cap, workers)
    return DelayCurve(nu_grid, add, se, counts, tail_add, tail_se, procedure.name, A, tuple(flags), model.name)


def _add_infinity(model, A, procedure, replications, seed, cap, workers):
    qsd = qsd_for(model, A)
    args = procedure.kernel_args(A)
    spec = _backend.make_spec(model, args["kind"], args["scale"], args["thr"], 1, 0.0, qsd.edges, qsd.cdf)
    nu = np.zeros(replications, dtype=np.int64)
    T, _ = _map_chunks(lambda s, c: _backend.run_lengths(spec, nu[s:s + c], seed, POST, s, cap),
                       replications, workers)
    return _mean_se(T)


def estimate_post_change_delay(procedure, A, model, replications=DEFAULT_DELAY_REPS, seed=0, cap=None,
                               workers=1) -> OperatingCharacteristics:
    """``E_0[T]``: mean delay when the change is in effect from the first observation."""
    spec = kernel_spec(procedure, model, A)
    cap = cap or default_cap(A)
    nu = np.zeros(replications, dtype=np.int64)
    T, cens = _map_chunks(lambda s, c: _backend.run_lengths(spec, nu[s:s + c], seed, POST, s, cap),
                          replications, workers)
    frac = float(cens.mean())
    return OperatingCharacteristics("add0", *_mean_se(T), replications, frac, procedure.name,
                                    model.name, A, _censor_flags(frac))


def estimate_sadd(curve: DelayCurve) -> OperatingCharacteristics:
    """Largest conditional delay over the grid and the tail value."""
    vals = list(curve.add) + ([curve.tail_add] if not math.isnan(curve.tail_add) else [])
    ses = list(curve.se) + ([curve.tail_se] if not math.isnan(curve.tail_add) else [])
    vals = np.array(vals)
    if len(vals) == 0 or np.all(np.isnan(vals)):
        raise EstimationError("empty delay curve")
    j = int(np.nanargmax(vals))
    where = "inf" if j == len(curve.add) else int(curve.nu[j])
    return OperatingCharacteristics("sadd", float(vals[j]), float(ses[j]), int(curve.counts.max()),
                                    0.0, curve.procedure, curve.model, curve.threshold, curve.flags,
                                    {"argmax_nu": where})


@dataclass
class SplicedRuns:
    """Per-replication pre-change run length ``T``, the integral delay
    ``sum_{k<T} (T_k - k)`` and the delay ``T_0`` with the change at 0."""

    T: np.ndarray
    censored: np.ndarray
    total: np.ndarray
    first: np.ndarray
    suffix_censored: np.ndarray
    procedure: str
    threshold: float


def spliced_runs(procedure, A, model, replications=DEFAULT_DELAY_REPS, seed=0, cap=None, workers=1):
    spec = kernel_spec(procedure, model, A)
    cap = cap or default_cap(A)
    out = _map_chunks(lambda s, c: _backend.spliced_sum(spec, seed, PRE, s, c, cap), replications, workers)
    return SplicedRuns(*out, procedure=procedure.name, threshold=A)


def estimate_riadd(procedure: Procedure, A: float, model: ChangePointModel,
                   replications: int = DEFAULT_DELAY_REPS, seed: int = 0, cap: Optional[int] = None,
                   runs: Optional[SplicedRuns] = None, workers: int = 1) -> OperatingCharacteristics:
    """Integral delay ``sum_k E_k[(T-k)^+]`` divided by the ARL.

    The sum is exact per replication (all ``k`` below the pre-change run
    length), so the only truncation is the run cap, reported as censoring.
    """
    runs = runs or spliced_runs(procedure, A, model, replications, seed, cap, workers)
    n = len(runs.T)
    est, se = ratio_estimate(runs.total, runs.T)
    frac = float(runs.censored.mean())
    flags = _censor_flags(frac)
    if runs.suffix_censored.sum():
        flags += ("suffix-censored",)
    num = _mean_se(runs.total)
    arl = _mean_se(runs.T)
    return OperatingCharacteristics("riadd", est, se, n, frac, procedure.name, model.name, A, flags,
                                    {"numerator": num, "arl": arl, "add0": _mean_se(runs.first)})


def estimate_stadd(procedure: Procedure, A: float, model: ChangePointModel, nu_large: Optional[int] = None,
                   replications: int = DEFAULT_DELAY_REPS, seed: int = 0, cap: Optional[int] = None,
                   arl: Optional[float] = None, workers: int = 1) -> OperatingCharacteristics:
    """Stationary delay of the multi-cyclic rule (restart after every false alarm)."""
    if arl is None:
        arl = estimate_arl(procedure, A, model, 2000, seed, cap).estimate
    flags = ()
    if nu_large is None:
        nu_large = int(math.ceil(20 * arl))
    elif nu_large < 10 * arl:
        flags = ("nu-too-small",)
        warnings.warn(f"change point {nu_large} is not far beyond the ARL {arl:.1f}")
    spec = kernel_spec(procedure, model, A)
    cap = cap or default_cap(A)
    delay, alarms, cens = _map_chunks(
        lambda s, c: _backend.multicyclic(spec, nu_large, seed, CYCLIC, s, c, cap), replications, workers)
    frac = float(cens.mean())
    return OperatingCharacteristics("stadd", *_mean_se(delay), replications, frac, procedure.name,
                                    model.name, A, flags + _censor_flags(frac),
                                    {"nu": nu_large, "mean_false_alarms": float(alarms.mean())})


def estimate_window_fa(procedure: Procedure, A: float, model: ChangePointModel, m: int, k_grid,
                       replications: int = DEFAULT_ARL_REPS, seed: int = 0, cap: Optional[int] = None,
                       workers: int = 1, samples=None) -> OperatingCharacteristics:
    """``sup_k P_inf(k < T <= k + m | T > k)`` over ``k_grid``."""
    if m < 1:
        raise ValueError("window length must be >= 1")
    if samples is None:
        samples, _ = run_length_samples(procedure, A, model, replications, seed, cap, workers=workers)
    T = np.asarray(samples)
    k_grid = np.asarray(k_grid, dtype=np.int64)
    probs, ses, counts = [], [], []
    for k in k_grid:
        alive = T > k
        c = int(alive.sum())
        counts.append(c)
        if c == 0:
            probs.append(math.nan)
            ses.append(math.inf)
            continue
        p = float(np.mean(T[alive] <= k + m))
        probs.append(p)
        ses.append(math.sqrt(max(p * (1 - p), 1.0 / c) / c))
    probs = np.array(probs)
    flags = ("few-survivors",) if min(counts) < MIN_SURVIVORS else ()
    j = int(np.nanargmax(probs))
    return OperatingCharacteristics("window_fa", float(probs[j]), float(ses[j]), len(T), 0.0,
                                    procedure.name, model.name, A, flags,
                                    {"k": k_grid, "probabilities": probs, "std_errors": np.array(ses),
                                     "counts": np.array(counts), "argmax_k": int(k_grid[j])})


def lower_bound_jb(sr_r_runs: SplicedRuns, r: float, A: Optional[float] = None) -> OperatingCharacteristics:
    """Lower bound on the best achievable SADD at the ARL of the SR-r rule.

    ``(r E_0[T] + sum_nu E_nu[(T - nu)^+]) / (r + E_inf[T])`` from spliced SR-r runs.
    """
    runs = sr_r_runs
    num = r * runs.first + runs.total
    den = r + runs.T.astype(float)
    est, se = ratio_estimate(num, den)
    frac = float(runs.censored.mean())
    return OperatingCharacteristics("jb", est, se, len(runs.T), frac, runs.procedure, "",
                                    runs.threshold if A is None else A, _censor_flags(frac))
