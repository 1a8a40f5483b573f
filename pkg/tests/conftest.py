from __future__ import annotations

import time
from dataclasses import dataclass

import pytest

from msfnet.data import Sample, generate_splices
from msfnet.model import ModelConfig, Network, save_checkpoint
from msfnet.train import TrainConfig, TrainLog, prepare_samples, run_training

OVERFIT_LADDER = (8, 16, 32, 64, 128)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): test that decides one acceptance criterion")
    config._acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        detail = dict(item.user_properties).get("detail", "")
        item.config._acceptance[marker.args[0]] = (status, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in results.items():
        terminalreporter.write_line(f"ACCEPTANCE {name}: {status}" + (f"  ({detail})" if detail else ""))


@dataclass
class OverfitRun:
    net: Network
    samples: list[Sample]
    items: list[dict]
    log: TrainLog
    seconds: float
    checkpoint: object
    iterations: int


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory) -> OverfitRun:
    """Tiny network driven to memorize 8 synthetic splices (one full batch per Adam step)."""
    out = tmp_path_factory.mktemp("overfit")
    samples = generate_splices(8, size=128, seed=1)
    model = ModelConfig(fusion="MS", signals=("SB",), skip="image", input_size=64,
                        encoder_channels=OVERFIT_LADDER, seed=0)
    cfg = TrainConfig(model=model, epochs=200, batch_size=8, lr=1e-3, seed=0)
    t0 = time.perf_counter()
    items = prepare_samples(samples, model)
    net = Network(model)
    _, log = run_training(net, cfg, items, items[:2])
    seconds = time.perf_counter() - t0
    path = save_checkpoint(net, out / "overfit.msfn")
    return OverfitRun(net, samples, items, log, seconds, path, iterations=cfg.epochs)
