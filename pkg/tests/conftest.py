import os

import pytest
from hypothesis import HealthCheck, settings

from deepforget import data as D
from deepforget import model as M
from deepforget import train as T

settings.register_profile("ci", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

# acceptance tests append (criterion, passed, detail) here; printed at the end
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_bundle():
    cfg = D.GenConfig(num_classes=4, input_dim=6, samples_per_class=80, seed=3)
    return D.apply_scenario(D.generate(cfg), D.Scenario.class_forget((0,)))


@pytest.fixture(scope="session")
def small_pretrained(small_bundle):
    ck = M.init([6, 16, 8], 4, seed=3)
    return T.fit(ck, small_bundle, "train", T.TrainConfig(epochs=30, learning_rate=0.05, batch_size=64, seed=3)).checkpoint


@pytest.fixture(scope="session")
def class_bundle():
    return D.apply_scenario(D.generate(D.GenConfig(seed=0)), D.Scenario.class_forget())


@pytest.fixture(scope="session")
def class_pretrained(class_bundle):
    ck = M.init([16, 64, 64, 32], 10, seed=0)
    return T.fit(ck, class_bundle, "train", T.TrainConfig(epochs=40, learning_rate=0.05, seed=0)).checkpoint
