from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, Mapping, Optional

import numpy as np

from genset import util
from genset.core import TimeSeries
from genset.scoring import Fit, ModelObjective, evaluate_model
from genset.surropt import OptimizationResult, optimize

logger = logging.getLogger(__name__)


def run_identification(
    config: Mapping[str, Any],
    kind: str,
    measured: TimeSeries,
    seed: Optional[int] = None,
    max_evals: Optional[int] = None,
    workers: Optional[int] = None,
) -> tuple[OptimizationResult, Dict[str, float], Fit]:
    """Search the free parameters of ``kind`` and score the best point found.

    With more than one worker each round proposes at least one point per
    worker and the batch is simulated in a process pool.
    """

    opt = util.section(config, "optimizer")
    freeze = util.section(config, "identify").get("freeze", [])
    vector = util.identification_vector(config, kind, freeze)
    names = vector.names
    seed = int(opt.get("seed", 0)) if seed is None else seed
    max_evals = int(opt.get("max_evals", 500)) if max_evals is None else max_evals
    workers = int(opt.get("workers", 1)) if workers is None else workers
    batch_size = max(int(opt.get("batch_size", 1)), workers)
    n_initial = opt.get("n_initial")
    d_free = int(np.count_nonzero(vector.upper > vector.lower))

    logger.info(
        "identifying %d parameters of %s (%d free), %d evaluations, seed %d, %d worker(s)",
        len(names), kind, d_free, max_evals, seed, workers,
    )
    objective = ModelObjective(config, kind, names, measured)
    kwargs = dict(
        seed=seed,
        weights=[float(w) for w in opt.get("weights", (0.3, 0.5, 0.8, 0.95))],
        n_initial=None if n_initial is None else int(n_initial),
        n_candidates=int(opt.get("candidates_per_dim", 500)) * max(d_free, 1),
        min_separation=float(opt.get("min_separation", 1e-3)),
        batch_size=batch_size,
        names=names,
    )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            result = optimize(objective, vector.lower, vector.upper, max_evals, executor=executor, **kwargs)
    else:
        result = optimize(objective, vector.lower, vector.upper, max_evals, **kwargs)

    best = dict(zip(names, (float(v) for v in result.x_best)))
    fit = evaluate_model(util.apply_parameters(config, best), kind, measured)
    return result, best, fit
