import functools

import numpy as np
import pytest

from freqtune.texclass import SynthSpec, TexModel, split_dataset, synth_dataset, train_classifier


@functools.lru_cache(maxsize=None)
def reference_setup(model_seed: int = 0):
    """The frozen reference configuration: default synthetic set, 70/15/15 split, default training."""
    data = synth_dataset(SynthSpec())
    train, attack, test = split_dataset(data, seed=0)
    model = TexModel(3, data.num_classes, seed=model_seed)
    history = train_classifier(model, train, seed=model_seed, heldout=test)
    return model, train, attack, test, history


@pytest.fixture(scope="session")
def reference():
    return reference_setup(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    m = TexModel(channels=3, num_classes=4, seed=3)
    # non-zero biases so every code path is exercised
    r = np.random.default_rng(3)
    for k in ("conv1_b", "conv2_b", "fc_b"):
        m.params[k] = r.normal(0, 0.1, size=m.params[k].shape)
    return m


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
