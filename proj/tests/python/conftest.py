import os
import subprocess
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[2]


def cli_path():
    env = os.environ.get("ILLUMINORM_CLI")
    if env:
        return env
    return str(ROOT / "build" / "illuminorm")


def schemas_dir():
    return Path(os.environ.get("ILLUMINORM_SCHEMAS", ROOT / "schemas"))


def run_cli(*args, check=True):
    proc = subprocess.run([cli_path(), *map(str, args)], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"{args} exited {proc.returncode}: {proc.stderr}")
    return proc


SMALL_MODEL = ["--widths", "4,8", "--latent-dim", "4", "--batch-size", "8", "--lr", "1e-3"]


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "ds"
    run_cli("gen-data", "--out", root, "--scenes", "72", "--test-scenes", "16", "--variants", "3", "--size", "32",
            "--seed", "11")
    return root


@pytest.fixture(scope="session")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "tae"
    run_cli("train", "--data", dataset, "--out", out, "--epochs", "2", "--seed", "3", *SMALL_MODEL)
    index = out / "index.csv"
    run_cli("index", "--checkpoint", out / "model.ckpt", "--data", dataset, "--out", index)
    return out, index
