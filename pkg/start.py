import argparse
import asyncio
import importlib
import pkgutil
import sys
import traceback
from types import ModuleType
from typing import Optional, Sequence

from loguru import logger

from util.config import ROOT_PATH, config
from util.exceptions import (
    AcceptanceException,
    ConfigException,
    SpadlinException,
)
from util.experiment import ExperimentConfig

PLUGIN_PATH = "plugins/experiments"


def load_commands(path: str = PLUGIN_PATH) -> dict[str, ModuleType]:
    package = path.strip("/").replace("/", ".")
    commands: dict[str, ModuleType] = dict()
    for info in pkgutil.iter_modules([str(ROOT_PATH / path)]):
        module = importlib.import_module(f"{package}.{info.name}")
        if module.COMMAND in commands:
            raise ConfigException(f"command {module.COMMAND!r} registered twice")
        commands[module.COMMAND] = module
        logger.debug(f"Loaded plugin {package}.{info.name}")
    return commands


def build_parser(commands: dict[str, ModuleType]) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="HOCON/JSON 配置文件")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="输出目录")
    common.add_argument("--workers", type=int)
    common.add_argument(
        "--paper-scale",
        "--full-scale",
        dest="full_scale",
        action="store_true",
        help="使用完整规模的试验次数",
    )
    common.add_argument("--check", action="store_true", help="验收检查失败时返回非零")

    parser = argparse.ArgumentParser(
        prog="spadlin", description="SPAD 首光子响应线性化与直方图无关 ToF 估计"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in sorted(commands):
        plugin = commands[name]
        sub = subparsers.add_parser(name, parents=[common], help=plugin.__doc__)
        if hasattr(plugin, "add_arguments"):
            plugin.add_arguments(sub)
        sub.set_defaults(handler=plugin.run, defaults=plugin.defaults)
    return parser


def overrides_of(args: argparse.Namespace) -> dict:
    common = {"command", "config", "seed", "out", "workers", "full_scale", "check"}
    return {
        key: value
        for key, value in vars(args).items()
        if key not in common and key not in ("handler", "defaults")
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    logger.remove()
    logger.add(sys.stderr, level=config.log_level)

    args = build_parser(load_commands()).parse_args(argv)
    experiment = None
    try:
        experiment = ExperimentConfig.resolve(
            args.command,
            args.defaults,
            path=args.config,
            seed=args.seed,
            out=args.out,
            workers=args.workers,
            full_scale=args.full_scale,
            check=args.check,
            overrides=overrides_of(args),
        )
        asyncio.run(args.handler(experiment))
    except AcceptanceException as ex:
        logger.error(f"Acceptance check failed: {ex}")
        return 1
    except SpadlinException as ex:
        logger.error(f"{type(ex).__name__}: {ex}")
        return 2
    except Exception as ex:
        seed = experiment.master_seed if experiment else args.seed
        trace = str().join(traceback.format_exception(ex))
        logger.error(f"[{args.command}] seed={seed}\n{trace}")
        return 3

    return 0


if __name__ == "__main__":
    sys.exit(main())
