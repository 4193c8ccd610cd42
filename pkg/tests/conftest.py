import time
from types import SimpleNamespace

import pytest

from dsnet.bench import make_benchmark, train_head
from dsnet.dshift import DSConfig

TRAIN_SCENES = 24
TRAIN_EPOCHS = 3
TRAIN_LR = 0.01

_VERDICTS = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def benchmark_model(tmp_path_factory):
    """Weight head trained on the mixed-size benchmark with default settings, shared across modules."""
    cfg = DSConfig()
    t0 = time.perf_counter()
    head, curve = train_head(make_benchmark(TRAIN_SCENES, seed=0), cfg, epochs=TRAIN_EPOCHS, learning_rate=TRAIN_LR)
    seconds = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("model") / "head.bin"
    head.save(path, cfg.candidates)
    return SimpleNamespace(cfg=cfg, head=head, curve=curve, path=path, seconds=seconds)


@pytest.fixture
def verdict(request):
    """Record one acceptance line; it is printed now and again in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash.setdefault(_VERDICTS, []).append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
