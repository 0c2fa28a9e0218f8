"""Detection statistics, their one-step updates and stopping rules.

All SR-family statistics are kept on the linear scale and saturate at
``SATURATION``; a saturated statistic is far beyond any usable threshold, so
the alarm decision is unaffected. CUSUM runs on the log scale and is compared
with ``log A``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from ._pykernels import CUSUM as CUSUM_KIND, EXP_GUARD, LINEAR, SATURATION

KINDS = ("sr", "sr_r", "srp", "shiryaev", "cusum")


class UnknownProcedureError(ValueError):
    pass


@dataclass(frozen=True)
class ShiryaevState:
    r: float
    p: float
    n: int = 0

    @classmethod
    def initial(cls, p: float, pi: float = 0.0) -> "ShiryaevState":
        if not 0.0 < p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if not 0.0 <= pi < 1.0:
            raise ValueError("pi must lie in [0, 1)")
        return cls(r=pi / ((1.0 - pi) * p), p=p)


@dataclass(frozen=True)
class SRState:
    """SR statistic; a nonzero ``head_start`` makes it the SR-r statistic."""

    r: float = 0.0
    n: int = 0
    head_start: float = 0.0

    @classmethod
    def with_head_start(cls, r0: float) -> "SRState":
        if r0 < 0:
            raise ValueError("head start must be nonnegative")
        return cls(r=r0, head_start=r0)


SRrState = SRState


@dataclass(frozen=True)
class SRPState(SRState):
    """SR statistic started from a draw of the quasi-stationary law."""

    init_distribution: object = None


@dataclass(frozen=True)
class CusumState:
    w: float = 0.0
    n: int = 0


@dataclass(frozen=True)
class Alarm:
    stopped: bool
    epoch: int
    terminal_statistic: float


def _grow(r: float, log_lr: float, scale: float = 1.0) -> float:
    if log_lr > EXP_GUARD:
        return SATURATION
    r = (1.0 + r) * math.exp(log_lr) * scale
    return SATURATION if r > SATURATION else r


def shiryaev_update(state: ShiryaevState, log_lr: float) -> ShiryaevState:
    """``r' = (1 + r) LR / (1 - p)``."""
    return replace(state, r=_grow(state.r, log_lr, 1.0 / (1.0 - state.p)), n=state.n + 1)


def posterior_probability(state: ShiryaevState) -> float:
    """Posterior probability that the change has already happened."""
    return state.r / (state.r + 1.0 / state.p)


def sr_update(state: SRState, log_lr: float) -> SRState:
    """``r' = (1 + r) LR``; identical for SR, SR-r and SRP states."""
    return replace(state, r=_grow(state.r, log_lr), n=state.n + 1)


def cusum_update(state: CusumState, log_lr: float) -> CusumState:
    w = state.w + log_lr
    return CusumState(w=0.0 if w < 0.0 else w, n=state.n + 1)


def _statistic(state) -> float:
    return state.w if isinstance(state, CusumState) else state.r


def _updater(state):
    if isinstance(state, ShiryaevState):
        return shiryaev_update
    if isinstance(state, CusumState):
        return cusum_update
    return sr_update


def default_state(kind: str, r: float = 0.0, p: Optional[float] = None, pi: float = 0.0, r0_draw=None):
    if kind == "sr":
        return SRState()
    if kind == "sr_r":
        return SRState.with_head_start(r)
    if kind == "srp":
        if r0_draw is None:
            raise ValueError("SRP needs an initial value drawn from the quasi-stationary law")
        return SRPState(r=r0_draw, head_start=r0_draw)
    if kind == "shiryaev":
        return ShiryaevState.initial(p, pi)
    if kind == "cusum":
        return CusumState()
    raise UnknownProcedureError(f"unknown procedure {kind!r}")


def _threshold(state, A: float) -> float:
    if isinstance(state, CusumState):
        return math.log(A)
    return A


def run_to_alarm(kind: str, init, threshold: float, stream: Iterable, cap: int) -> Alarm:
    """Feed log-LR values from ``stream`` until the statistic reaches ``threshold``.

    ``stream`` yields log-LR floats or ``(x, log_lr)`` pairs. ``stopped`` is
    False when ``cap`` observations (or the stream) ran out first; that outcome
    is a censored run, not an error.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    state = init if init is not None else default_state(kind)
    update = _updater(state)
    thr = _threshold(state, threshold)
    n = 0
    for item in stream:
        if n >= cap:
            break
        l = item[1] if isinstance(item, tuple) else item
        state = update(state, l)
        n += 1
        if _statistic(state) >= thr:
            return Alarm(True, n, _statistic(state))
    return Alarm(False, n, _statistic(state))


def trajectory(kind: str, init, threshold: float, stream: Iterable, cap: int) -> list:
    """``(n, statistic, alarm)`` rows up to and including the alarm epoch."""
    state = init if init is not None else default_state(kind)
    update = _updater(state)
    thr = _threshold(state, threshold)
    rows = []
    for n, item in enumerate(stream, start=1):
        if n > cap:
            break
        state = update(state, item[1] if isinstance(item, tuple) else item)
        hit = _statistic(state) >= thr
        rows.append((n, _statistic(state), int(hit)))
        if hit:
            break
    return rows


def write_trajectory_csv(path, rows, header_lines=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "statistic", "alarm"])
        for n, s, a in rows:
            w.writerow([n, repr(float(s)), a])


@dataclass(frozen=True)
class Procedure:
    """A named detection rule, independent of its threshold.

    ``kind`` is one of ``sr``, ``sr_r`` (head start ``r``), ``srp``,
    ``shiryaev`` (prior ``p``, ``pi``) or ``cusum``. Thresholds are always given
    on the linear scale ``A``; CUSUM compares its log-scale statistic with
    ``log A``.
    """

    kind: str
    r: float = 0.0
    p: Optional[float] = None
    pi: float = 0.0
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnknownProcedureError(f"unknown procedure {self.kind!r}; expected one of {KINDS}")
        if self.r < 0:
            raise ValueError("head start must be nonnegative")
        if self.kind == "shiryaev":
            if self.p is None or not 0 < self.p < 1:
                raise ValueError("Shiryaev procedure needs p in (0, 1)")
            if not 0 <= self.pi < 1:
                raise ValueError("pi must lie in [0, 1)")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "sr_r":
            return f"sr_r({self.r:g})"
        if self.kind == "shiryaev":
            return f"shiryaev(p={self.p:g},pi={self.pi:g})"
        return self.kind

    @property
    def needs_qsd(self) -> bool:
        return self.kind == "srp"

    def kernel_args(self, A: float) -> dict:
        """Kernel encoding: statistic kind, scale, threshold and fixed start."""
        if A <= 0:
            raise ValueError("threshold must be positive")
        if self.kind == "cusum":
            return dict(kind=CUSUM_KIND, scale=1.0, thr=math.log(A), r0=0.0)
        if self.kind == "shiryaev":
            return dict(kind=LINEAR, scale=1.0 / (1.0 - self.p), thr=A,
                        r0=self.pi / ((1.0 - self.pi) * self.p))
        r0 = self.r if self.kind == "sr_r" else 0.0
        return dict(kind=LINEAR, scale=1.0, thr=A, r0=r0)


def sr() -> Procedure:
    return Procedure("sr")


def sr_r(r: float) -> Procedure:
    return Procedure("sr_r", r=float(r))


def srp() -> Procedure:
    return Procedure("srp")


def shiryaev(p: float, pi: float = 0.0) -> Procedure:
    return Procedure("shiryaev", p=p, pi=pi)


def cusum() -> Procedure:
    return Procedure("cusum")
