import os

import numpy as np
import pytest
import torch

from hoi_pretrain.config import ModelConfig
from hoi_pretrain.model import HOIPretrainModel

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")

torch.set_num_threads(1)


def tiny_config(**overrides) -> ModelConfig:
    """A model small enough for finite differences: 8 tokens on a 16x32 image.

    The larger init scale keeps gradients well above finite-difference
    roundoff.
    """
    base = dict(embed_dim=16, num_queries=3, num_encoder_layers=1, num_decoder_layers=1,
                num_heads=2, ffn_hidden_dim=24, num_object_classes=3, num_verb_classes=5,
                proj_dim=8, patch_size=8, init_std=0.2)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(seed=0, dtype=torch.float64, **overrides) -> HOIPretrainModel:
    torch.manual_seed(seed)
    model = HOIPretrainModel(tiny_config(**overrides))
    return model.to(dtype)


def random_image(seed=0, height=16, width=32, channels=3):
    return np.random.default_rng(seed).random((height, width, channels))


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# ---------------------------------------------------------------------------
# acceptance summary: one pass/fail line per criterion after the run

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[number] = (title, report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, outcome = _ACCEPTANCE[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title}")
