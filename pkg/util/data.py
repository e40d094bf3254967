import math
import os
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import aiofiles
import numpy as np
import orjson as json

from .detectors import EMPTY, Histogram
from .exceptions import HistogramRangeException
from .photon_model import PS

HISTOGRAM_HEADER = ("bin_index", "bin_start_ps", "count")


def format_value(value: Any) -> str:
    """确定性的文本表示：浮点数用 repr，NaN 写作 nan。"""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _prepare(path: str | os.PathLike[str] | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


async def write_csv(
    path: str | os.PathLike[str] | Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
):
    lines = [",".join(header)]
    lines.extend(",".join(format_value(v) for v in row) for row in rows)
    async with aiofiles.open(_prepare(path), "w", newline="\n") as fd:
        await fd.write("\n".join(lines) + "\n")


async def read_csv(path: str | os.PathLike[str] | Path) -> tuple[list[str], list[list[str]]]:
    async with aiofiles.open(path) as fd:
        lines = [line.strip() for line in (await fd.read()).splitlines() if line.strip()]
    if not lines:
        return list(), list()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


async def write_json(path: str | os.PathLike[str] | Path, data: Any):
    payload = json.dumps(
        data,
        option=json.OPT_INDENT_2 | json.OPT_SORT_KEYS | json.OPT_SERIALIZE_NUMPY,
    )
    async with aiofiles.open(_prepare(path), "wb") as fd:
        await fd.write(payload + b"\n")


async def read_json(path: str | os.PathLike[str] | Path) -> Any:
    async with aiofiles.open(path, "rb") as fd:
        return json.loads(await fd.read())


def histogram_rows(h: Histogram) -> list[tuple[int, int, int]]:
    rows = [
        (i, int(start), int(count))
        for i, (start, count) in enumerate(zip(h.starts_ps, h.counts))
    ]
    if h.empty > 0:
        rows.append((EMPTY, EMPTY, h.empty))
    return rows


async def write_histogram(path: str | os.PathLike[str] | Path, h: Histogram):
    await write_csv(path, HISTOGRAM_HEADER, histogram_rows(h))


async def read_histogram(
    path: str | os.PathLike[str] | Path, bin_width: Optional[float] = None
) -> Histogram:
    """读取直方图 CSV；bin_index 为 -1 的行是空采集次数。"""
    header, rows = await read_csv(path)
    if tuple(header) != HISTOGRAM_HEADER:
        raise HistogramRangeException(f"unexpected histogram header: {header}")

    starts: list[int] = list()
    counts: list[int] = list()
    empty: Optional[int] = None
    for index, start, count in rows:
        if int(index) == EMPTY:
            empty = int(count)
            continue
        if int(index) != len(counts):
            raise HistogramRangeException(f"bin {index} out of order")
        starts.append(int(start))
        counts.append(int(count))

    if bin_width is None:
        if len(starts) < 2:
            raise HistogramRangeException("bin width cannot be inferred from one bin")
        bin_width = (starts[1] - starts[0]) * PS

    counts_array = np.asarray(counts, dtype=np.int64)
    acquisitions = int(counts_array.sum()) + empty if empty is not None else None
    return Histogram(bin_width, counts_array, acquisitions=acquisitions)


async def write_timestamps(path: str | os.PathLike[str] | Path, times: Iterable[int]):
    async with aiofiles.open(_prepare(path), "w", newline="\n") as fd:
        await fd.write("".join(f"{int(t)}\n" for t in times))


async def read_timestamps(path: str | os.PathLike[str] | Path) -> np.ndarray:
    async with aiofiles.open(path) as fd:
        text = await fd.read()
    return np.asarray([int(line) for line in text.split()], dtype=np.int64)
