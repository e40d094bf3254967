import os
import shutil
from pathlib import Path
from typing import Optional

from pyhocon import ConfigFactory

ROOT_PATH = Path(__file__).resolve().parent.parent


class Config:
    def __init__(self):
        if not os.path.exists(ROOT_PATH / "spadlin.conf"):
            shutil.copyfile(ROOT_PATH / "example.conf", ROOT_PATH / "spadlin.conf")

        # info
        self.version: Optional[str] = None
        # log
        self.log_level: Optional[str] = None
        # runtime
        self.workers: Optional[int] = None
        self.seed: Optional[int] = None
        # output
        self.output_dir: Optional[str] = None

        # 解析配置文件
        self.read_config()

    def read_config(self):
        data = ConfigFactory.parse_file(ROOT_PATH / "spadlin.conf")
        self.version = data["info"]["version"]
        self.log_level = data["log"]["log_level"]
        self.workers = data["runtime"]["workers"]
        self.seed = data["runtime"]["seed"]
        self.output_dir = data["output"]["dir"]


config = Config()
