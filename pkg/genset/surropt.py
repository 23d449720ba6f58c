"""Cubic-RBF surrogate optimization over a box.

The search runs in the unit cube of the free (non-pinned) dimensions. Each
iteration refits the interpolant and picks the candidate with the lowest
weighted merit of scaled surrogate value and scaled distance.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg as scplinalg
import scipy.spatial as scpspatial

from .core import DegenerateSampleError, GensetError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_WEIGHTS = (0.3, 0.5, 0.8, 0.95)


class CubicKernel:
    """Cubic RBF kernel, ``phi(r) = r**3``, conditionally positive definite of order 2."""

    order = 2

    def eval(self, dists):
        return np.asarray(dists, dtype=float) ** 3


class LinearTail:
    """Linear polynomial tail ``[1, x_1, ..., x_d]``."""

    degree = 1

    def __init__(self, dim: int):
        self.dim = dim

    @property
    def dim_tail(self) -> int:
        return 1 + self.dim

    def eval(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.column_stack([np.ones(X.shape[0]), X])


_KERNEL = CubicKernel()


def rbf_kernel(r):
    if np.any(np.asarray(r) < 0):
        raise ValidationError("kernel distances must not be negative")
    out = _KERNEL.eval(r)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SamplePoint:
    x: np.ndarray
    g: float


@dataclass(frozen=True)
class SurrogateModel:
    centers: np.ndarray
    lambdas: np.ndarray
    alpha: np.ndarray
    values: np.ndarray

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def npts(self) -> int:
        return self.centers.shape[0]

    def max_interpolation_error(self) -> float:
        return float(np.max(np.abs(eval_surrogate(self, self.centers) - self.values)))


def fit_surrogate_arrays(X: np.ndarray, fX: np.ndarray) -> SurrogateModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    fX = np.asarray(fX, dtype=float).ravel()
    n, d = X.shape
    if fX.shape[0] != n:
        raise ValidationError(f"{n} sample points but {fX.shape[0]} values")
    if not np.isfinite(fX).all():
        raise ValidationError("surrogate values must be finite")
    tail = LinearTail(d)
    if n < tail.dim_tail + 1:
        raise DegenerateSampleError(f"need at least {tail.dim_tail + 1} points for a {d}-D fit, got {n}")

    P = tail.eval(X)
    if np.linalg.matrix_rank(P) < tail.dim_tail:
        raise DegenerateSampleError("sample points are not in general position for a linear tail")
    phi = _KERNEL.eval(scpspatial.distance.cdist(X, X))
    A = np.block([[phi, P], [P.T, np.zeros((tail.dim_tail, tail.dim_tail))]])
    rhs = np.concatenate([fX, np.zeros(tail.dim_tail)])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scplinalg.LinAlgWarning)
            coeffs = scplinalg.solve(A, rhs, assume_a="sym")
    except (np.linalg.LinAlgError, scplinalg.LinAlgWarning) as exc:
        raise DegenerateSampleError(f"surrogate system is singular: {exc}") from None
    return SurrogateModel(centers=X.copy(), lambdas=coeffs[:n], alpha=coeffs[n:], values=fX.copy())


def fit_surrogate(points: Sequence[SamplePoint]) -> SurrogateModel:
    if not points:
        raise DegenerateSampleError("no sample points to fit")
    return fit_surrogate_arrays(np.vstack([p.x for p in points]), np.array([p.g for p in points]))


def eval_surrogate(model: SurrogateModel, x):
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.dim:
        raise ValidationError(f"surrogate is {model.dim}-D, got points of dimension {X.shape[1]}")
    phi = _KERNEL.eval(scpspatial.distance.cdist(X, model.centers))
    values = phi @ model.lambdas + LinearTail(model.dim).eval(X) @ model.alpha
    return float(values[0]) if single else values


def scaled_surrogate(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def min_distances(candidates: np.ndarray, evaluated: np.ndarray) -> np.ndarray:
    return np.min(scpspatial.distance.cdist(np.atleast_2d(candidates), np.atleast_2d(evaluated)), axis=1)


def scaled_distance(candidates: np.ndarray, evaluated: np.ndarray) -> np.ndarray:
    """``(d_max - d) / (d_max - d_min)`` of each candidate's nearest-neighbour distance."""

    d = min_distances(candidates, evaluated)
    lo, hi = d.min(), d.max()
    if hi == lo:
        return np.zeros_like(d)
    return (hi - d) / (hi - lo)


def merit(w: float, S, D):
    if not 0.0 < w < 1.0:
        raise ValidationError(f"merit weight must lie in (0, 1), got {w!r}")
    return w * np.asarray(S) + (1.0 - w) * np.asarray(D)


def latin_hypercube(n_samples: int, n_factors: int, rng: np.random.Generator, genepool: int = 1000) -> np.ndarray:
    """Latin hypercube in the unit cube with weakly correlated columns.

    Returns an array of shape ``(n_samples, n_factors)``.
    """

    if n_factors == 0:
        return np.empty((n_samples, 0))
    candidates = np.empty([genepool, n_samples], dtype=np.float64)
    for i in range(genepool):
        candidates[i, :] = rng.permutation(n_samples)
    corr = np.fabs(np.corrcoef(candidates))
    keepers = [0]
    keeper_gross_corr = 0
    for _ in range(n_factors - 1):
        keeper_gross_corr = keeper_gross_corr + corr[keepers[-1], :]
        # never pick the same column twice
        masked = np.where(np.isin(np.arange(genepool), keepers), np.inf, keeper_gross_corr)
        keepers.append(int(np.argmin(masked)))
    lhs = candidates[keepers, :].copy()
    lhs += rng.random(lhs.shape)
    lhs /= n_samples
    return lhs.T


def generate_candidates(
    best: np.ndarray,
    n_candidates: int,
    sigma: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Half uniform points, half Gaussian perturbations of ``best``, all in the unit cube."""

    d = best.shape[0]
    n_uniform = n_candidates // 2
    uniform = rng.random((n_uniform, d))
    perturbed = best + sigma * rng.standard_normal((n_candidates - n_uniform, d))
    return np.clip(np.vstack([uniform, perturbed]), 0.0, 1.0)


def select_by_merit(
    model: SurrogateModel,
    evaluated: np.ndarray,
    candidates: np.ndarray,
    weights: Sequence[float],
    min_separation: float = 1e-3,
) -> List[np.ndarray]:
    """Greedy merit selection, one point per weight.

    Selected points count as evaluated for the following picks. Candidates
    closer than ``min_separation`` to any of them are never chosen.
    """

    candidates = np.atleast_2d(candidates)
    s_scaled = scaled_surrogate(eval_surrogate(model, candidates))
    points = np.atleast_2d(evaluated)
    chosen: List[np.ndarray] = []
    for w in weights:
        dists = min_distances(candidates, points)
        lo, hi = dists.min(), dists.max()
        d_scaled = np.zeros_like(dists) if hi == lo else (hi - dists) / (hi - lo)
        score = merit(w, s_scaled, d_scaled)
        score = np.where(dists < min_separation, np.inf, score)
        k = int(np.argmin(score))
        if not np.isfinite(score[k]):
            break
        chosen.append(candidates[k].copy())
        points = np.vstack([points, candidates[k]])
    return chosen


def propose_candidate(
    model: SurrogateModel,
    evaluated: np.ndarray,
    best: np.ndarray,
    w: float,
    n_candidates: int,
    rng: np.random.Generator,
    sigma: float = 0.2,
    min_separation: float = 1e-3,
    max_retries: int = 5,
    candidates: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Next point to evaluate, in the unit cube.

    With an explicit ``candidates`` set no retries are made.
    """

    if candidates is not None:
        picked = select_by_merit(model, evaluated, candidates, [w], min_separation)
        if not picked:
            raise DegenerateSampleError("every candidate lies too close to an evaluated point")
        return picked[0]

    for attempt in range(max_retries + 1):
        cand = generate_candidates(best, n_candidates, sigma * 2.0 ** attempt, rng)
        picked = select_by_merit(model, evaluated, cand, [w], min_separation)
        if picked:
            return picked[0]
        logger.debug("all candidates within %g of evaluated points, widening perturbation", min_separation)
    raise DegenerateSampleError(f"no separated candidate after {max_retries} retries")


@dataclass
class OptimizationResult:
    x_best: np.ndarray
    g_best: float
    history: pd.DataFrame

    @property
    def n_evals(self) -> int:
        return len(self.history)


class _StepControl:
    """Success/failure bookkeeping for the Gaussian perturbation radius."""

    def __init__(self, dim: int, sigma: float = 0.2):
        self.sigma = sigma
        self.sigma_max = sigma
        self.sigma_min = sigma * 0.5 ** 6
        self.failtol = int(max(math.ceil(dim), 4))
        self.succtol = 3
        self.status = 0
        self.fbest = math.inf

    def update(self, values: Sequence[float]) -> None:
        finite = [v for v in values if np.isfinite(v)]
        new_best = min(finite) if finite else math.inf
        if new_best < self.fbest - 1e-3 * math.fabs(self.fbest) or (np.isinf(self.fbest) and finite):
            self.fbest = new_best
            self.status = max(1, self.status + 1)
        else:
            self.status = min(-1, self.status - 1)
        if self.status <= -self.failtol:
            self.status = 0
            self.sigma = max(self.sigma / 2.0, self.sigma_min)
            logger.debug("reducing sampling radius to %g", self.sigma)
        if self.status >= self.succtol:
            self.status = 0
            self.sigma = min(2.0 * self.sigma, self.sigma_max)
            logger.debug("increasing sampling radius to %g", self.sigma)


def _penalized(raw: Sequence[float]) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    finite = np.isfinite(raw)
    penalty = raw[finite].max() if finite.any() else 0.0
    return np.where(finite, raw, penalty)


def optimize(
    objective: Callable[[np.ndarray], float],
    lower: Sequence[float],
    upper: Sequence[float],
    max_evals: int,
    seed: int = 0,
    weights: Sequence[float] = DEFAULT_WEIGHTS,
    n_initial: Optional[int] = None,
    n_candidates: Optional[int] = None,
    min_separation: float = 1e-3,
    batch_size: int = 1,
    executor: Optional[Executor] = None,
    names: Optional[Sequence[str]] = None,
) -> OptimizationResult:
    """Minimize a black-box ``objective`` inside ``[lower, upper]``.

    Objective failures (a ``GensetError`` or a non-finite value) are kept in
    the history and fed to the surrogate at the worst finite value seen so far.
    Pinned dimensions, where ``lower == upper``, are held fixed.
    """

    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or lower.ndim != 1:
        raise ValidationError("lower and upper bounds must be 1-D arrays of equal length")
    if not (np.isfinite(lower).all() and np.isfinite(upper).all()):
        raise ValidationError("bounds must be finite")
    bad = np.nonzero(lower > upper)[0]
    if bad.size:
        raise ValidationError("lower bound above upper bound", [f"dimension {i}" for i in bad])
    for w in weights:
        if not 0.0 < w < 1.0:
            raise ValidationError(f"merit weight {w!r} outside (0, 1)")
    names = list(names) if names is not None else [f"x{i}" for i in range(lower.shape[0])]
    if len(names) != lower.shape[0]:
        raise ValidationError(f"{len(names)} names for {lower.shape[0]} dimensions")

    free = upper > lower
    d = int(free.sum())
    rng = np.random.default_rng(seed)

    def to_full(u: np.ndarray) -> np.ndarray:
        x = lower.copy()
        x[free] = lower[free] + u * (upper[free] - lower[free])
        return x

    X_unit: List[np.ndarray] = []
    raw: List[float] = []
    rows: List[dict] = []
    best = {"g": math.inf, "x": None}

    def evaluate(points: List[np.ndarray], phase: str) -> List[float]:
        fulls = [to_full(u) for u in points]
        results = list(executor.map(_safe_call, [objective] * len(fulls), fulls)) if executor else [
            _safe_call(objective, x) for x in fulls
        ]
        values = []
        for u, x, (value, status) in zip(points, fulls, results):
            X_unit.append(u)
            raw.append(value)
            if np.isfinite(value) and value < best["g"]:
                best["g"], best["x"] = value, x
            row = {"eval": len(raw), "phase": phase, "status": status, "value": value, "best_so_far": best["g"]}
            row.update(dict(zip(names, x)))
            rows.append(row)
            values.append(value)
        return values

    if d == 0:
        logger.info("all dimensions pinned, evaluating the single feasible point")
        evaluate([np.empty(0)], "initial")
        return _result(best, rows, to_full(np.empty(0)))

    n_initial = n_initial or max(2 * (d + 1), 20)
    if max_evals <= n_initial:
        raise ValidationError(f"max_evals {max_evals} must exceed the initial design size {n_initial}")
    n_candidates = n_candidates or 500 * d

    evaluate(list(latin_hypercube(n_initial, d, rng)), "initial")
    control = _StepControl(d)
    control.update(raw)
    weight_index = 0

    while len(raw) < max_evals:
        X = np.vstack(X_unit)
        fX = _penalized(raw)
        b = min(batch_size, max_evals - len(raw))
        step_weights = [weights[(weight_index + i) % len(weights)] for i in range(b)]
        weight_index += b
        incumbent = X[int(np.argmin(fX))]
        try:
            model = fit_surrogate_arrays(X, fX)
            err = model.max_interpolation_error()
            if err > 1e-6 * max(1.0, float(np.max(np.abs(fX)))):
                logger.warning("surrogate interpolation error %.3e after refit", err)
            cand = generate_candidates(incumbent, n_candidates, control.sigma, rng)
            proposals = select_by_merit(model, X, cand, step_weights, min_separation)
            if len(proposals) < b:
                proposals += [
                    propose_candidate(model, np.vstack([X] + proposals), incumbent, w, n_candidates, rng,
                                      control.sigma, min_separation)
                    for w in step_weights[len(proposals):]
                ]
        except DegenerateSampleError as exc:
            logger.warning("surrogate step skipped (%s), sampling uniformly", exc)
            proposals = [rng.random(d) for _ in range(b)]

        control.update(evaluate(proposals, "adaptive"))
        logger.debug("eval %d/%d best %.6g", len(raw), max_evals, best["g"])

    return _result(best, rows, to_full(X_unit[0]))


def _safe_call(objective: Callable[[np.ndarray], float], x: np.ndarray) -> Tuple[float, str]:
    try:
        value = float(objective(x))
    except GensetError as exc:
        logger.info("objective failed at %s: %s", np.array2string(x, precision=4), exc)
        return math.inf, "failed"
    if not np.isfinite(value):
        return math.inf, "non-finite"
    return value, "ok"


def _result(best: dict, rows: List[dict], fallback: np.ndarray) -> OptimizationResult:
    history = pd.DataFrame(rows)
    x_best = best["x"] if best["x"] is not None else fallback
    logger.info("optimization finished after %d evaluations, best %.6g", len(rows), best["g"])
    return OptimizationResult(x_best=np.asarray(x_best, dtype=float), g_best=float(best["g"]), history=history)
