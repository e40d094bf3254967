import copy
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import orjson as json
from loguru import logger
from pyhocon import ConfigFactory, ConfigTree
from xxhash import xxh32_hexdigest

from .config import config
from .data import write_json
from .detectors import Scheme
from .exceptions import AcceptanceException, ConfigException


def _plain(value: Any) -> Any:
    if isinstance(value, ConfigTree):
        return {key: _plain(value[key]) for key in value}
    if isinstance(value, list):
        return [_plain(v) for v in value]
    return value


@dataclass
class ExperimentConfig:
    """一次实验命令的完整配置。

    优先级：插件默认值 < full_scale 覆盖 < --config 文件 < 命令行参数。
    """

    name: str
    params: ConfigTree
    master_seed: int
    output: Path
    workers: int = 1
    full_scale: bool = False
    check: bool = False
    notes: list[str] = field(default_factory=list)

    @classmethod
    def resolve(
        cls,
        name: str,
        defaults: dict,
        path: Optional[str | os.PathLike[str]] = None,
        seed: Optional[int] = None,
        out: Optional[str | os.PathLike[str]] = None,
        workers: Optional[int] = None,
        full_scale: bool = False,
        check: bool = False,
        overrides: Optional[dict] = None,
    ) -> "ExperimentConfig":
        defaults = copy.deepcopy(defaults)
        overlay = defaults.pop("full_scale", dict())
        params = ConfigFactory.from_dict(defaults)
        if full_scale and overlay:
            params = ConfigFactory.from_dict(overlay).with_fallback(params)
        if path is not None:
            try:
                user = ConfigFactory.parse_file(str(path))
            except Exception as ex:
                raise ConfigException(f"cannot parse {path}: {ex}") from ex
            params = user.with_fallback(params)
        # 命令专属的命令行参数
        overrides = {k: v for k, v in (overrides or dict()).items() if v is not None}
        if overrides:
            params = ConfigFactory.from_dict(overrides).with_fallback(params)

        master_seed = seed if seed is not None else params.get("seed", config.seed)
        experiment = cls(
            name=name,
            params=params,
            master_seed=int(master_seed),
            output=Path(out if out is not None else config.output_dir) / name,
            workers=int(workers or config.workers or 1),
            full_scale=full_scale,
            check=check,
        )
        experiment.validate()
        return experiment

    def validate(self):
        for key in ("windows", "trials"):
            if key in self.params and int(self.params[key]) < 1:
                raise ConfigException(f"{key} must be at least 1")
        if "scheme" in self.params:
            self.scheme
        if self.workers < 1:
            raise ConfigException("workers must be at least 1")

    def get(self, key: str, default: Any = None) -> Any:
        return _plain(self.params.get(key, default))

    def number(self, key: str) -> float:
        return float(self.params[key])

    def count(self, key: str) -> int:
        return int(self.params[key])

    def flag(self, key: str) -> bool:
        return bool(self.params.get(key, False))

    def path(self, key: str) -> Optional[Path]:
        value = self.params.get(key, None)
        if value is None:
            return None
        path = Path(value)
        if not path.exists():
            raise ConfigException(f"{key} file not found: {path}")
        return path

    def grid(self, key: str) -> list[float]:
        values = [float(v) for v in self.params.get_list(key, list())]
        if not values:
            raise ConfigException(f"grid {key!r} is empty")
        return values

    @property
    def scheme(self) -> Scheme:
        try:
            return Scheme(self.params.get("scheme"))
        except ValueError as ex:
            raise ConfigException(f"unknown scheme {self.params.get('scheme')!r}") from ex

    def manifest(self) -> dict:
        resolved = _plain(self.params)
        return {
            "experiment": self.name,
            "version": config.version,
            "seed": self.master_seed,
            "full_scale": self.full_scale,
            "config": resolved,
            "config_digest": xxh32_hexdigest(
                json.dumps(resolved, option=json.OPT_SORT_KEYS)
            ),
            "notes": self.notes,
        }

    async def write_manifest(self):
        await write_json(self.output / "manifest.json", self.manifest())

    def verify(self, checks: dict[str, bool]):
        failed = [name for name, passed in checks.items() if not passed]
        for name in failed:
            logger.warning(f"[{self.name}] check failed: {name}")
        if self.check and failed:
            raise AcceptanceException(f"{self.name}: {', '.join(failed)}")
