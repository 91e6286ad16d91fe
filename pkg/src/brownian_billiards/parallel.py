"""
Fan independent jobs (ensemble paths, grid points) out to a process pool.

Jobs are pure functions of picklable inputs, so results depend only on the job
list: `asyncio.gather` returns them in job order whatever order they finish in.
"""

import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

logger = logging.getLogger(__name__)

J = TypeVar("J")
R = TypeVar("R")


async def _run_jobs(fn: Callable[[J], R], jobs: Sequence[J], workers: int, label: str) -> list[R]:
    # At most `workers` jobs in flight at once
    semaphore = asyncio.Semaphore(workers)
    loop = asyncio.get_running_loop()
    done = 0

    with ProcessPoolExecutor(max_workers=workers) as pool:

        async def run_one(job: J) -> R:
            nonlocal done
            async with semaphore:
                result = await loop.run_in_executor(pool, fn, job)
                done += 1
                logger.info("✓ %s %d/%d", label, done, len(jobs))
                return result

        tasks = [run_one(job) for job in jobs]
        return await asyncio.gather(*tasks)


def run_pool(fn: Callable[[J], R], jobs: Sequence[J], workers: int = 1, label: str = "job") -> list[R]:
    "Run fn over jobs, in-process when workers <= 1"
    if workers <= 1 or len(jobs) <= 1:
        results = []
        for i, job in enumerate(jobs, start=1):
            results.append(fn(job))
            logger.info("✓ %s %d/%d", label, i, len(jobs))
        return results
    return asyncio.run(_run_jobs(fn, jobs, workers, label))
