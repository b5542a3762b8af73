import numpy as np
import pytest

from fgsmlab.data import synthetic_dataset
from fgsmlab.runner import TrainConfig, train


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """A CNN trained cleanly for a few epochs on synthetic data, with its data."""
    out = tmp_path_factory.mktemp("trained")
    cfg = TrainConfig(dataset="synthetic", train_n=256, eval_n=100, epochs=10, epsilon=0.0, batch_size=16,
                      eval_epsilon=8 / 255, eval_steps=2, lambda_ga=0.0, lambda_orth=0.0,
                      ll_n=16, ll_samples=1, output_dir=str(out), checkpoint_every=2)
    result = train(cfg)
    return result, synthetic_dataset(cfg.seed + 1, cfg.eval_n)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion number and summary")
    config._criteria = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    crit = item.config._criteria
    n, text = mark.args
    failed = call.excinfo is not None and call.when in ("setup", "call")
    if failed or n not in crit:
        crit[n] = ("FAIL" if failed else "PASS", text)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not config._criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n, (status, text) in sorted(config._criteria.items()):
        terminalreporter.write_line(f"criterion {n}: {status}  {text}")
