"""Kernel backend selection.

The compiled kernels are used when the extension imports and the model is a
built-in family; otherwise the pure-Python kernels run. Set
``SRDETECT_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import math
import os
from typing import NamedTuple

import numpy as np

from . import _pykernels
from .model import BERNOULLI, CONSTANT, EXPONENTIAL, GAUSSIAN, ChangePointModel, _gauss_coeffs

try:
    if os.environ.get("SRDETECT_BACKEND", "").lower() == "python":
        raise ImportError("forced pure-Python backend")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKEND = "compiled" if _ckernels is not None else "python"

_DUMMY_EDGES = np.array([0.0, 1.0])
_DUMMY_CDF = np.array([0.0, 1.0])


class KernelSpec(NamedTuple):
    fam: int
    coef: np.ndarray
    source: object
    kind: int
    scale: float
    thr: float
    init_mode: int
    r0: float
    q_edges: np.ndarray
    q_cdf: np.ndarray


def model_coef(model: ChangePointModel) -> np.ndarray:
    code = model.family_code
    coef = np.zeros(5)
    if code == GAUSSIAN:
        mu0, mu1, sigma = model.params
        a, b = _gauss_coeffs(mu0, mu1, sigma)
        coef[:] = (mu0, mu1, sigma, a, b)
    elif code == EXPONENTIAL:
        lam0, lam1 = model.params
        coef[:] = (lam0, lam1, 0.0, lam1 - lam0, math.log(lam1 / lam0))
    elif code == BERNOULLI:
        q0, q1 = model.params
        coef[:] = (q0, q1, 0.0, math.log(q1 / q0), math.log((1 - q1) / (1 - q0)))
    elif code == CONSTANT:
        coef[:2] = model.params
    return coef


def make_spec(model, kind, scale, thr, init_mode=0, r0=0.0, edges=None, cdf=None) -> KernelSpec:
    if edges is None:
        edges, cdf = _DUMMY_EDGES, _DUMMY_CDF
    return KernelSpec(model.family_code, model_coef(model), model, int(kind), float(scale),
                      float(thr), int(init_mode), float(r0),
                      np.ascontiguousarray(edges, dtype=float), np.ascontiguousarray(cdf, dtype=float))


def _impl(fam):
    if _ckernels is not None and fam >= 0:
        return _ckernels
    return _pykernels


def backend_for(model: ChangePointModel) -> str:
    return "compiled" if _impl(model.family_code) is _ckernels else "python"


def run_lengths(spec, nu, seed, stream, start, cap, impl=None):
    nu = np.ascontiguousarray(nu, dtype=np.int64)
    return (impl or _impl(spec.fam)).run_lengths(spec, nu, seed, stream, start, int(cap))


def spliced_sum(spec, seed, stream, start, n, cap, impl=None):
    return (impl or _impl(spec.fam)).spliced_sum(spec, seed, stream, start, int(n), int(cap))


def spliced_grid(spec, grid, seed, stream, start, n, cap, impl=None):
    grid = np.ascontiguousarray(grid, dtype=np.int64)
    return (impl or _impl(spec.fam)).spliced_grid(spec, grid, seed, stream, start, int(n), int(cap))


def multicyclic(spec, nu, seed, stream, start, n, cap, impl=None):
    return (impl or _impl(spec.fam)).multicyclic(spec, int(nu), seed, stream, start, int(n), int(cap))


def overshoots(model, a_grid, seed, stream, start, n, cap, impl=None):
    a_grid = np.ascontiguousarray(a_grid, dtype=float)
    return (impl or _impl(model.family_code)).overshoots(
        model.family_code, model_coef(model), model, a_grid, seed, stream, start, int(n), int(cap))


def exp_series(model, post_regime, sign, J, seed, stream, start, n, impl=None):
    return (impl or _impl(model.family_code)).exp_series(
        model.family_code, model_coef(model), model, bool(post_regime), float(sign), int(J),
        seed, stream, start, int(n))


def survivor_states(spec, n_cond, seed, stream, start, n, impl=None):
    return (impl or _impl(spec.fam)).survivor_states(spec, int(n_cond), seed, stream, start, int(n))


def stat_path(spec, n_steps, seed, stream, impl=None):
    return (impl or _impl(spec.fam)).stat_path(spec, int(n_steps), seed, stream)


def make_spec_table(dist) -> KernelSpec:
    """Spec whose only role is sampling the initial value from ``dist``."""
    return KernelSpec(-1, np.zeros(5), None, 0, 1.0, math.inf, 1, 0.0,
                      np.ascontiguousarray(dist.edges, dtype=float), np.ascontiguousarray(dist.cdf, dtype=float))
