import numpy as np
import pytest

from pcsr import models


def make_full_model(num_classes=2, feature_dim=4, scale=2, seed=0, channels=(4,),
                    upsampler_hidden=None, classifier_hidden=(6,)):
    """Small model with every module attached, marked as fully trained."""
    if upsampler_hidden is None:
        upsampler_hidden = tuple((max(2, 12 // (j + 1)),) for j in range(num_classes))
    model = models.build_model(scale=scale, feature_dim=feature_dim, backbone_channels=channels,
                               upsampler_hidden=upsampler_hidden,
                               classifier_hidden=classifier_hidden, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for j in range(1, num_classes):
        models.attach_upsampler(model, j, rng)
    if num_classes > 1:
        models.attach_classifier(model, rng)
    model.trained_stage = num_classes - 1
    return model


@pytest.fixture
def full_model():
    return make_full_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
