import numpy as np
import pytest

from mtlse.scene import make_scene, synth_rir
from mtlse.synth import synth_noise, synth_speech


@pytest.fixture(scope="session")
def speech():
    return synth_speech(1.5, seed=11)


@pytest.fixture(scope="session")
def rir500():
    return synth_rir(500.0, 750.0, seed=5)


@pytest.fixture(scope="session")
def noisy_scene(speech, rir500):
    noise = synth_noise("white", speech.size, seed=3)
    return make_scene(speech, rir500, noise, 0.0, seed=7, scene_id="t-0")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from _helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")
