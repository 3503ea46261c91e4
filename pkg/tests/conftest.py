import time
from dataclasses import dataclass

import pytest

from bcsnn.data import SplitSpec, split, synthetic_dataset
from bcsnn.models import build_desk_model
from bcsnn.trainer import TrainConfig, evaluate, train


@dataclass
class DeskRun:
    network: object
    history: list
    train_set: object
    test_set: object
    config: TrainConfig
    seconds: float
    plain: object = None
    mc: object = None


def desk_datasets(seed=0):
    """250 synthetic two-class images split 200/50."""
    ds = synthetic_dataset(2, 125, 32, seed=seed)
    return split(ds, SplitSpec(0.8, 0.2, seed=seed))


@pytest.fixture(scope="session")
def desk_run():
    """Desk model trained once per session with rate coding, 30 epochs, lr 1e-4, batch 20."""
    train_set, test_set = desk_datasets()
    config = TrainConfig(learning_rate=1e-4, batch_size=20, epochs=30, coding="rate", seed=0)
    net = build_desk_model(seed=0)
    start = time.perf_counter()
    _, history = train(net, train_set, None, config)
    run = DeskRun(net, history, train_set, test_set, config, time.perf_counter() - start)
    run.plain = evaluate(net, test_set, "rate", mc=False, num_steps=config.num_steps)
    run.mc = evaluate(net, test_set, "rate", mc=True, mc_passes=100, num_steps=config.num_steps, base_seed=0)
    return run


# -- acceptance reporting ------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False, "detail": ""})
    if rep.when == "call":
        entry["ran"] = True
    if rep.failed:
        entry["ok"] = False
        entry["detail"] = str(rep.longrepr).strip().splitlines()[-1][:160] if rep.longrepr else ""


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] and e["ran"] else ("FAIL" if not e["ok"] else "NOT RUN")
        line = f"criterion {number}: {status}  {e['title']}"
        if e["detail"]:
            line += f"  ({e['detail']})"
        terminalreporter.write_line(line)
