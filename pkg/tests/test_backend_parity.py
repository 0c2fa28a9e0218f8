"""The compiled kernels must reproduce the pure-Python reference bit for bit."""
import numpy as np
import pytest

from srdetect import _backend, _pykernels
from srdetect.detectors import cusum, shiryaev, sr, sr_r, srp
from srdetect.metrics import kernel_spec
from srdetect.model import bernoulli_rate, constant_lr, exponential_rate, gaussian_shift

pytestmark = pytest.mark.skipif(_backend._ckernels is None, reason="compiled extension not built")
C = _backend._ckernels
PY = _pykernels

MODELS = [gaussian_shift(), exponential_rate(1.0, 2.0), bernoulli_rate(0.2, 0.4), constant_lr(0.0, 0.5)]
PROCS = [sr(), sr_r(3.0), srp(), shiryaev(0.05, 0.1), cusum()]


def same(a, b):
    for x, y in zip(a, b):
        np.testing.assert_array_equal(np.asarray(x), np.asarray(y))


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
@pytest.mark.parametrize("proc", PROCS, ids=lambda p: p.name)
def test_run_lengths_and_splices(model, proc):
    if proc.kind == "srp" and model.family == "constant":
        pytest.skip("deterministic statistic has no quasi-stationary law")
    spec = kernel_spec(proc, model, 30.0)
    nu = np.array([0, 3, 10, _pykernels.NU_INF] * 10, dtype=np.int64)
    same(_backend.run_lengths(spec, nu, 9, 1, 17, 5000, impl=C),
         _backend.run_lengths(spec, nu, 9, 1, 17, 5000, impl=PY))
    same(_backend.spliced_sum(spec, 9, 1, 0, 30, 5000, impl=C),
         _backend.spliced_sum(spec, 9, 1, 0, 30, 5000, impl=PY))
    grid = np.array([0, 1, 5, 20])
    same(_backend.spliced_grid(spec, grid, 9, 1, 0, 30, 5000, impl=C),
         _backend.spliced_grid(spec, grid, 9, 1, 0, 30, 5000, impl=PY))
    same(_backend.multicyclic(spec, 200, 9, 4, 0, 20, 5000, impl=C),
         _backend.multicyclic(spec, 200, 9, 4, 0, 20, 5000, impl=PY))


@pytest.mark.parametrize("model", MODELS[:3], ids=lambda m: m.name)
def test_walk_and_series_kernels(model):
    same([_backend.overshoots(model, [2.0, 5.0], 3, 5, 0, 200, 10 ** 6, impl=C)],
         [_backend.overshoots(model, [2.0, 5.0], 3, 5, 0, 200, 10 ** 6, impl=PY)])
    for post, sign in ((True, -1.0), (False, 1.0)):
        same([_backend.exp_series(model, post, sign, 25, 3, 6, 0, 200, impl=C)],
             [_backend.exp_series(model, post, sign, 25, 3, 6, 0, 200, impl=PY)])
    spec = kernel_spec(sr(), model, 50.0)
    same([_backend.survivor_states(spec, 40, 3, 1, 0, 300, impl=C)],
         [_backend.survivor_states(spec, 40, 3, 1, 0, 300, impl=PY)])
    same([_backend.stat_path(spec, 500, 3, 8, impl=C)], [_backend.stat_path(spec, 500, 3, 8, impl=PY)])


def test_chunking_does_not_change_results():
    spec = kernel_spec(sr(), gaussian_shift(), 40.0)
    nu = np.full(100, _pykernels.NU_INF, dtype=np.int64)
    whole, _ = _backend.run_lengths(spec, nu, 1, 1, 0, 10 ** 6)
    parts = [_backend.run_lengths(spec, nu[s:s + 30], 1, 1, s, 10 ** 6)[0] for s in range(0, 100, 30)]
    np.testing.assert_array_equal(whole, np.concatenate(parts))


def test_generic_model_falls_back_to_python():
    g = gaussian_shift()
    import dataclasses
    generic = dataclasses.replace(g, family=None, name="generic")
    assert _backend.backend_for(generic) == "python"
    assert _backend.backend_for(g) == "compiled"
