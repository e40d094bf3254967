from asyncio import Semaphore, gather, to_thread
from typing import Any, Callable, Iterable, Optional

import numpy as np

from .config import config


def cell_rng(master_seed: int, index: int) -> np.random.Generator:
    """格点/试验的独立随机流，只取决于 (master_seed, index)。"""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


class Pool(object):
    def __init__(self, workers: Optional[int] = None):
        self.workers = max(1, workers or config.workers or 1)
        self.semaphore = Semaphore(self.workers)

    async def _run(self, func: Callable[..., Any], *args):
        async with self.semaphore:
            return await to_thread(func, *args)

    async def map(self, func: Callable[..., Any], cells: Iterable[tuple]) -> list:
        # 结果按提交顺序返回
        return await gather(*(self._run(func, *cell) for cell in cells))
