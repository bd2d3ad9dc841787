"""Shared fixtures: trained rosters for the acceptance suite.

Training the eight-member roster takes a couple of minutes, so each finished
run directory is kept in the pytest cache under a key derived from the
package sources and the experiment config; any source edit retrains.
"""
import hashlib
import shutil
from pathlib import Path

import pytest

import qadvlab
from qadvlab import cli, data
from qadvlab.config import ExperimentConfig

ACCEPTANCE_LINES = []


def _source_key(cfg: ExperimentConfig) -> str:
    h = hashlib.sha256()
    pkg = Path(qadvlab.__file__).parent
    for name in ("simulator.py", "models.py", "data.py", "training.py", "cli.py", "config.py"):
        h.update((pkg / name).read_bytes())
    h.update(cfg.hash.encode())
    return h.hexdigest()[:16]


def trained_run(request, task: str) -> ExperimentConfig:
    """Config of a run directory holding datasets and all eight checkpoints for ``task``."""
    probe = ExperimentConfig(task=task)
    key = _source_key(probe)
    cache_dir = Path(request.config.cache.mkdir(f"qadvlab-{task}-{key}"))
    cfg = ExperimentConfig(task=task, out=cache_dir / "run")
    if not (cfg.out / "training_summary.csv").is_file():
        if cfg.out.exists():
            shutil.rmtree(cfg.out)
        cli.cmd_ingest(cfg, log=lambda *_: None)
        cli.cmd_train(cfg, log=lambda *_: None)
    return cfg


@pytest.fixture(scope="session")
def ising_run(request):
    return trained_run(request, "ising")


@pytest.fixture(scope="session")
def fidelity_run(request):
    """MNIST run when the IDX files are present, otherwise the synthetic-image stand-in."""
    have_mnist = data.find_mnist(ExperimentConfig().mnist_dir) is not None
    return trained_run(request, "mnist" if have_mnist else "synthetic")


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the lines are repeated in the terminal summary."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append((number, line))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
