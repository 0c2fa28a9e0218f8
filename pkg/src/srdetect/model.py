"""iid change-point data model, geometric prior and stream simulation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np
from scipy import special, stats

from .rng import PATH, Stream

GAUSSIAN = 0
EXPONENTIAL = 1
BERNOULLI = 2
CONSTANT = 3

FAMILY_CODES = {"gaussian": GAUSSIAN, "exponential": EXPONENTIAL,
                "bernoulli": BERNOULLI, "constant": CONSTANT}


class ModelSupportError(ValueError):
    """Observation outside the common support of the pre/post densities."""


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChangePointModel:
    """Pre-change density ``f`` and post-change density ``g`` with samplers.

    Built-in families (see :func:`gaussian_shift`, :func:`exponential_rate`,
    :func:`bernoulli_rate`, :func:`constant_lr`) set ``family``/``params`` and
    run on the compiled kernels. A model built directly from callables is
    simulated by the pure-Python kernels.
    """

    name: str
    pre_density: Callable[[float], float]
    post_density: Callable[[float], float]
    pre_sampler: Callable[[Stream], float]
    post_sampler: Callable[[Stream], float]
    family: Optional[str] = None
    params: tuple = ()
    arithmetic: bool = False
    log_lr_fn: Optional[Callable[[float], float]] = field(default=None, compare=False)

    @property
    def family_code(self) -> int:
        return FAMILY_CODES.get(self.family, -1)

    @property
    def key(self) -> str:
        """Stable identifier for caches and reports."""
        if self.family is None:
            return self.name
        return f"{self.family}(" + ",".join(repr(float(p)) for p in self.params) + ")"

    def log_lr(self, x: float) -> float:
        if self.log_lr_fn is not None:
            value = self.log_lr_fn(x)
        else:
            f, g = self.pre_density(x), self.post_density(x)
            with np.errstate(divide="ignore"):
                value = float(np.log(g) - np.log(f)) if f > 0 and g > 0 else math.nan
        if not math.isfinite(value):
            raise ModelSupportError(f"log-likelihood ratio not finite at x={x!r} for model {self.name}")
        return value

    def log_lr_cdf(self, y, post: bool = False):
        """CDF of ``log LR(X)`` with ``X ~ g`` (``post``) or ``X ~ f``.

        Only available for built-in families; returns ``None`` otherwise.
        """
        y = np.asarray(y, dtype=float)
        code = self.family_code
        if code == GAUSSIAN:
            mu0, mu1, sigma = self.params
            a, b = _gauss_coeffs(mu0, mu1, sigma)
            mean = a * (mu1 if post else mu0) + b
            return special.ndtr((y - mean) / (abs(a) * sigma))
        if code == EXPONENTIAL:
            lam0, lam1 = self.params
            lam = lam1 if post else lam0
            c, d = math.log(lam1 / lam0), lam1 - lam0
            if d > 0:
                return np.exp(-lam * np.maximum(0.0, (c - y) / d))
            return -np.expm1(-lam * np.maximum(0.0, (y - c) / -d))
        if code == BERNOULLI:
            q0, q1 = self.params
            q = q1 if post else q0
            l1, l0 = math.log(q1 / q0), math.log((1 - q1) / (1 - q0))
            return q * (y >= l1) + (1 - q) * (y >= l0)
        if code == CONSTANT:
            c = self.params[1] if post else self.params[0]
            return (y >= c).astype(float)
        return None

    def kl_closed_form(self, post: bool = True) -> Optional[float]:
        """``E_g[log LR]`` (``post``) or ``-E_f[log LR]`` when known in closed form."""
        code = self.family_code
        if code == GAUSSIAN:
            mu0, mu1, sigma = self.params
            return (mu1 - mu0) ** 2 / (2 * sigma ** 2)
        if code == EXPONENTIAL:
            rho = self.params[1] / self.params[0]
            return math.log(rho) - 1 + 1 / rho if post else rho - 1 - math.log(rho)
        if code == BERNOULLI:
            q0, q1 = self.params
            if post:
                return q1 * math.log(q1 / q0) + (1 - q1) * math.log((1 - q1) / (1 - q0))
            return q0 * math.log(q0 / q1) + (1 - q0) * math.log((1 - q0) / (1 - q1))
        if code == CONSTANT:
            return self.params[1] if post else -self.params[0]
        return None


def _gauss_coeffs(mu0, mu1, sigma):
    s2 = sigma * sigma
    return (mu1 - mu0) / s2, -(mu1 * mu1 - mu0 * mu0) / (2 * s2)


def gaussian_shift(mu0: float = 0.0, mu1: float = 1.0, sigma: float = 1.0) -> ChangePointModel:
    if sigma <= 0:
        raise ModelConfigError("sigma must be positive")
    if mu0 == mu1:
        raise ModelConfigError("pre- and post-change means coincide")
    a, b = _gauss_coeffs(mu0, mu1, sigma)
    pre, post = stats.norm(mu0, sigma), stats.norm(mu1, sigma)
    return ChangePointModel(
        name=f"gaussian(mu0={mu0:g},mu1={mu1:g},sigma={sigma:g})",
        pre_density=pre.pdf, post_density=post.pdf,
        pre_sampler=lambda s: mu0 + sigma * s.normal(),
        post_sampler=lambda s: mu1 + sigma * s.normal(),
        family="gaussian", params=(float(mu0), float(mu1), float(sigma)),
        log_lr_fn=lambda x: a * x + b,
    )


def exponential_rate(lam0: float = 1.0, lam1: float = 2.0) -> ChangePointModel:
    """Exponential observations whose rate changes from ``lam0`` to ``lam1``."""
    if lam0 <= 0 or lam1 <= 0:
        raise ModelConfigError("rates must be positive")
    if lam0 == lam1:
        raise ModelConfigError("pre- and post-change rates coincide")
    c, d = math.log(lam1 / lam0), lam1 - lam0

    def llr(x):
        if x < 0:
            raise ModelSupportError(f"exponential model requires x >= 0, got {x!r}")
        return c - d * x

    return ChangePointModel(
        name=f"exponential(lam0={lam0:g},lam1={lam1:g})",
        pre_density=stats.expon(scale=1 / lam0).pdf, post_density=stats.expon(scale=1 / lam1).pdf,
        pre_sampler=lambda s: s.exponential() / lam0,
        post_sampler=lambda s: s.exponential() / lam1,
        family="exponential", params=(float(lam0), float(lam1)),
        log_lr_fn=llr,
    )


def bernoulli_rate(q0: float = 0.2, q1: float = 0.4) -> ChangePointModel:
    """Bernoulli rate change. Its log LR is arithmetic."""
    if not (0 < q0 < 1 and 0 < q1 < 1):
        raise ModelConfigError("Bernoulli rates must lie in (0, 1)")
    if q0 == q1:
        raise ModelConfigError("pre- and post-change rates coincide")
    l1, l0 = math.log(q1 / q0), math.log((1 - q1) / (1 - q0))

    def llr(x):
        if x == 1:
            return l1
        if x == 0:
            return l0
        raise ModelSupportError(f"Bernoulli model requires x in {{0, 1}}, got {x!r}")

    return ChangePointModel(
        name=f"bernoulli(q0={q0:g},q1={q1:g})",
        pre_density=lambda x: stats.bernoulli(q0).pmf(x),
        post_density=lambda x: stats.bernoulli(q1).pmf(x),
        pre_sampler=lambda s: 1.0 if s.uniform() < q0 else 0.0,
        post_sampler=lambda s: 1.0 if s.uniform() < q1 else 0.0,
        family="bernoulli", params=(float(q0), float(q1)), arithmetic=True,
        log_lr_fn=llr,
    )


def constant_lr(log_lr_pre: float = 0.0, log_lr_post: Optional[float] = None) -> ChangePointModel:
    """Degenerate test model: every observation carries a fixed log LR.

    With the defaults LR is identically 1, so the SR statistic after ``n``
    steps equals ``n`` exactly. Observations are reported as 0 (pre) or 1 (post).
    """
    if log_lr_post is None:
        log_lr_post = log_lr_pre
    return ChangePointModel(
        name=f"constant(pre={log_lr_pre:g},post={log_lr_post:g})",
        pre_density=lambda x: 1.0, post_density=lambda x: 1.0,
        pre_sampler=lambda s: 0.0, post_sampler=lambda s: 1.0,
        family="constant", params=(float(log_lr_pre), float(log_lr_post)), arithmetic=True,
        log_lr_fn=lambda x: log_lr_post if x == 1.0 else log_lr_pre,
    )


def log_lr(model: ChangePointModel, x: float) -> float:
    """``log g(x) - log f(x)``; raises :class:`ModelSupportError` when not finite."""
    return model.log_lr(x)


@dataclass(frozen=True)
class GeometricPrior:
    """Zero-modified geometric prior: ``P(nu < 0) = pi``, ``P(nu = n) = (1-pi) p (1-p)^n``."""

    pi: float
    p: float

    def __post_init__(self):
        if not 0.0 <= self.pi < 1.0:
            raise ModelConfigError(f"pi must lie in [0, 1), got {self.pi}")
        if not 0.0 < self.p < 1.0:
            raise ModelConfigError(f"p must lie in (0, 1), got {self.p}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Change points with ``nu <= 0`` collapsed to 0."""
        nu = rng.geometric(self.p, size=size).astype(np.int64) - 1
        nu[rng.random(size) < self.pi] = 0
        return nu


def prior_mass(prior: GeometricPrior, n: int) -> float:
    """``pi_0 = pi + (1-pi) p`` at ``n = 0`` and ``(1-pi) p (1-p)^n`` for ``n >= 1``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    tail = (1 - prior.pi) * prior.p * (1 - prior.p) ** n
    return prior.pi + tail if n == 0 else tail


@dataclass(frozen=True)
class StreamSpec:
    change_point: float  # int >= 0 or math.inf
    n_max: int
    rng_seed: int

    def __post_init__(self):
        nu = self.change_point
        if not (nu == math.inf or (float(nu).is_integer() and nu >= 0)):
            raise ModelConfigError(f"change point must be a nonnegative integer or inf, got {nu!r}")
        if self.n_max < 1:
            raise ModelConfigError("n_max must be >= 1")


def iter_stream(model: ChangePointModel, spec: StreamSpec) -> Iterator[tuple]:
    """Lazily yield ``(x, log_lr)`` pairs: ``f`` draws up to the change point, ``g`` after."""
    s = Stream(spec.rng_seed, PATH, 0)
    for n in range(1, spec.n_max + 1):
        x = model.pre_sampler(s) if n <= spec.change_point else model.post_sampler(s)
        yield x, model.log_lr(x)


def simulate_stream(model: ChangePointModel, spec: StreamSpec) -> list:
    return list(iter_stream(model, spec))


def validate_model(model: ChangePointModel, replications: int = 20000, seed: int = 0) -> tuple:
    """Monte Carlo check that ``E_g log LR > 0 > E_f log LR`` beyond 3 standard errors.

    Returns the sample means ``(E_g, E_f)``; raises :class:`ModelConfigError` otherwise.
    """
    out = []
    for post, sign in ((True, 1.0), (False, -1.0)):
        s = Stream(seed, PATH, 1 if post else 2)
        draw = model.post_sampler if post else model.pre_sampler
        v = np.array([model.log_lr(draw(s)) for _ in range(replications)])
        m, se = v.mean(), v.std(ddof=1) / math.sqrt(replications)
        if not sign * m > 3 * se:
            side = "g" if post else "f"
            raise ModelConfigError(f"mean log LR under {side} is {m:.4g} (se {se:.2g}); densities indistinguishable")
        out.append(float(m))
    return tuple(out)


def model_from_config(cfg: dict) -> ChangePointModel:
    """Build a model from a mapping such as ``{"name": "gaussian", "mu1": 1.0}``."""
    cfg = dict(cfg)
    name = cfg.pop("name", None)
    builders = {"gaussian": gaussian_shift, "exponential": exponential_rate,
                "bernoulli": bernoulli_rate, "constant": constant_lr}
    if name not in builders:
        raise ModelConfigError(f"unknown model {name!r}; expected one of {sorted(builders)}")
    try:
        return builders[name](**cfg)
    except TypeError as exc:
        raise ModelConfigError(f"bad parameters for model {name!r}: {exc}") from None
