"""Run independent fine-tuning jobs, optionally across processes.

Each job derives its seed from the base seed and its own tokens, so the
results do not depend on the worker count or completion order.
"""

from __future__ import annotations

import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

_shared: dict = {}


def _init(fn, kwargs):
    _shared.update(fn=fn, kwargs=kwargs)


def _work(item):
    return _shared["fn"](item, **_shared["kwargs"])


def map_jobs(fn: Callable, items: Sequence, jobs: int = 1, **kwargs) -> list:
    """[fn(item, **kwargs) for item in items], forked over `jobs` workers.

    `fn` must be a module-level function; the shared kwargs reach workers
    through fork rather than per-item pickling.
    """
    if jobs <= 1 or len(items) <= 1:
        return [fn(item, **kwargs) for item in items]
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=min(jobs, len(items)), mp_context=ctx, initializer=_init,
                             initargs=(fn, kwargs)) as pool:
        return list(pool.map(_work, items))


def _finetune_job(history, pre, ds, t, cfg, target):
    from .model import finetune

    return finetune(pre, history, ds, t, cfg, target=target)


def run_jobs(pre, histories: Sequence, ds, t: int, cfg, target: str, jobs: int = 1) -> list:
    return map_jobs(_finetune_job, histories, jobs, pre=pre, ds=ds, t=t, cfg=cfg, target=target)
