from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
import pytest

from genset.core import DegenerateSampleError, NumericalError, ValidationError
from genset.surropt import (
    SamplePoint,
    eval_surrogate,
    fit_surrogate,
    fit_surrogate_arrays,
    latin_hypercube,
    merit,
    optimize,
    propose_candidate,
    rbf_kernel,
    scaled_distance,
    scaled_surrogate,
    select_by_merit,
)


def sphere(x):
    return float(np.sum(np.asarray(x) ** 2))


def test_kernel_values():
    assert rbf_kernel(0.0) == 0.0
    assert rbf_kernel(2.0) == 8.0
    np.testing.assert_allclose(rbf_kernel(np.array([1.0, 3.0])), [1.0, 27.0])
    with pytest.raises(ValidationError):
        rbf_kernel(-1.0)


def test_surrogate_interpolates_one_dimensional_points():
    model = fit_surrogate([SamplePoint(np.array([x]), x) for x in (0.0, 0.5, 1.0)])
    for x in (0.0, 0.5, 1.0):
        assert eval_surrogate(model, np.array([x])) == pytest.approx(x, abs=1e-12)


def test_surrogate_interpolates_random_points():
    rng = np.random.default_rng(3)
    X = rng.random((40, 4))
    fX = np.sin(3 * X[:, 0]) + X[:, 1] ** 2 - X[:, 2] * X[:, 3]
    model = fit_surrogate_arrays(X, fX)
    assert model.max_interpolation_error() <= 1e-6
    # linear functions are reproduced by the tail alone
    lin = fit_surrogate_arrays(X, 2.0 + X @ np.array([1.0, -1.0, 0.5, 0.0]))
    np.testing.assert_allclose(lin.lambdas, 0.0, atol=1e-8)


def test_surrogate_needs_enough_points():
    with pytest.raises(DegenerateSampleError):
        fit_surrogate_arrays(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(DegenerateSampleError):
        fit_surrogate([])


def test_surrogate_rejects_collinear_points():
    X = np.column_stack([np.linspace(0, 1, 6), np.linspace(0, 1, 6)])
    with pytest.raises(DegenerateSampleError):
        fit_surrogate_arrays(X, np.arange(6.0))


def test_eval_surrogate_checks_dimension():
    model = fit_surrogate_arrays(np.random.default_rng(0).random((6, 2)), np.arange(6.0))
    with pytest.raises(ValidationError):
        eval_surrogate(model, np.zeros(3))


def test_scaling_helpers():
    np.testing.assert_allclose(scaled_surrogate([1.0, 3.0, 2.0]), [0.0, 1.0, 0.5])
    np.testing.assert_array_equal(scaled_surrogate([2.0, 2.0]), [0.0, 0.0])
    evaluated = np.array([[0.0, 0.0]])
    candidates = np.array([[1.0, 0.0], [0.5, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(scaled_distance(candidates, evaluated), [0.0, 0.5, 1.0])


def test_merit_weights():
    assert merit(0.3, 1.0, 0.0) == pytest.approx(0.3)
    assert merit(0.95, 0.0, 1.0) == pytest.approx(0.05)
    for w in (0.0, 1.0):
        with pytest.raises(ValidationError):
            merit(w, 0.5, 0.5)


def test_latin_hypercube_stratifies_every_column():
    rng = np.random.default_rng(11)
    sample = latin_hypercube(20, 5, rng)
    assert sample.shape == (20, 5)
    assert ((sample >= 0) & (sample < 1)).all()
    for column in sample.T:
        assert sorted(np.floor(column * 20).astype(int)) == list(range(20))


def test_selection_skips_points_too_close():
    X = np.random.default_rng(5).random((10, 2))
    model = fit_surrogate_arrays(X, np.sum(X ** 2, axis=1))
    chosen = select_by_merit(model, X, X[:3].copy(), [0.5], min_separation=1e-3)
    assert chosen == []
    with pytest.raises(DegenerateSampleError):
        propose_candidate(model, X, X[0], 0.5, 10, np.random.default_rng(0), candidates=X[:3].copy())


def test_selection_picks_distinct_points_per_weight():
    rng = np.random.default_rng(6)
    X = rng.random((10, 2))
    model = fit_surrogate_arrays(X, np.sum(X ** 2, axis=1))
    chosen = select_by_merit(model, X, rng.random((200, 2)), [0.3, 0.5, 0.8, 0.95])
    assert len(chosen) == 4
    assert len({tuple(p) for p in chosen}) == 4


@pytest.mark.slow
def test_sphere_in_five_dimensions():
    result = optimize(sphere, [-2.0] * 5, [2.0] * 5, max_evals=200, seed=0)
    assert result.n_evals == 200
    assert result.g_best < 1e-2
    assert sphere(result.x_best) == pytest.approx(result.g_best)


def test_fixed_seed_reproduces_history():
    first = optimize(sphere, [-1.0] * 2, [1.0] * 2, max_evals=30, seed=4)
    second = optimize(sphere, [-1.0] * 2, [1.0] * 2, max_evals=30, seed=4)
    pd.testing.assert_frame_equal(first.history, second.history)
    other = optimize(sphere, [-1.0] * 2, [1.0] * 2, max_evals=30, seed=5)
    assert not first.history["value"].equals(other.history["value"])


def test_history_layout():
    result = optimize(sphere, [-1.0, 0.0], [1.0, 2.0], max_evals=25, seed=1, names=["a", "b"])
    history = result.history
    assert list(history.columns) == ["eval", "phase", "status", "value", "best_so_far", "a", "b"]
    assert list(history["eval"]) == list(range(1, 26))
    assert (history["phase"].iloc[:20] == "initial").all()
    assert (history["phase"].iloc[20:] == "adaptive").all()
    assert (history["best_so_far"].diff().dropna() <= 0).all()
    assert history["best_so_far"].iloc[-1] == result.g_best
    assert ((history["a"] >= -1) & (history["a"] <= 1)).all()
    assert ((history["b"] >= 0) & (history["b"] <= 2)).all()


def test_pinned_dimensions_stay_fixed():
    result = optimize(sphere, [-1.0, 0.5, -1.0], [1.0, 0.5, 1.0], max_evals=30, seed=2)
    assert (result.history["x1"] == 0.5).all()
    assert result.x_best[1] == 0.5


def test_all_dimensions_pinned_evaluates_once():
    calls = []

    def objective(x):
        calls.append(x.copy())
        return sphere(x)

    result = optimize(objective, [0.3, 0.4], [0.3, 0.4], max_evals=50)
    assert len(calls) == 1
    assert result.n_evals == 1
    assert result.g_best == pytest.approx(0.25)


def test_failures_are_recorded_and_skipped():
    def objective(x):
        if x[0] > 0.5:
            raise NumericalError("diverged")
        if x[0] < -0.5:
            return float("nan")
        return sphere(x)

    result = optimize(objective, [-1.0, -1.0], [1.0, 1.0], max_evals=40, seed=3)
    statuses = set(result.history["status"])
    assert {"ok", "failed", "non-finite"} <= statuses
    failed = result.history[result.history["status"] != "ok"]
    assert np.isinf(failed["value"]).all()
    assert np.isfinite(result.g_best)
    assert -0.5 <= result.x_best[0] <= 0.5


def test_unrelated_errors_propagate():
    def objective(x):
        raise KeyError("bug")

    with pytest.raises(KeyError):
        optimize(objective, [0.0], [1.0], max_evals=30)


def test_batches_match_executor_and_serial_runs():
    kwargs = dict(max_evals=30, seed=8, batch_size=3)
    serial = optimize(sphere, [-1.0] * 2, [1.0] * 2, **kwargs)
    with ThreadPoolExecutor(max_workers=3) as pool:
        pooled = optimize(sphere, [-1.0] * 2, [1.0] * 2, executor=pool, **kwargs)
    pd.testing.assert_frame_equal(serial.history, pooled.history)
    assert serial.n_evals == 30


@pytest.mark.parametrize(
    "lower,upper,kwargs",
    [
        ([0.0], [1.0, 2.0], {}),
        ([1.0], [0.0], {}),
        ([0.0], [np.inf], {}),
        ([0.0], [1.0], {"weights": (0.5, 1.0)}),
        ([0.0], [1.0], {"max_evals": 10}),
        ([0.0], [1.0], {"names": ["a", "b"]}),
    ],
)
def test_invalid_arguments(lower, upper, kwargs):
    kwargs = {"max_evals": 30, **kwargs}
    with pytest.raises(ValidationError):
        optimize(sphere, lower, upper, **kwargs)
