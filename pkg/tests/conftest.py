import numpy as np
import pytest

from gatedformer.model import ModelConfig, build_model


def micro_config(**overrides) -> ModelConfig:
    base = dict(num_layers=1, max_seq_len=8, model_dim=4, ffn_dim=8, num_heads=2,
                src_vocab_size=11, tgt_vocab_size=11, use_eau=True, use_grc=True,
                dropout=0.0, label_smoothing=0.1, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def micro_model():
    return build_model(micro_config())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance bookkeeping: tests marked ``acceptance(n, title)`` roll up into one
# pass/fail line per criterion at the end of the run.
_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "passed": True, "tests": 0})
    if rep.when == "call":
        entry["tests"] += 1
    if not rep.passed:
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["passed"] and e["tests"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {e['title']} ({e['tests']} tests)")
