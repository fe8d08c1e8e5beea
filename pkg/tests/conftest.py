from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from bsner import kernels
from bsner.corpus import Span
from bsner.model import BiaffineNER, ModelConfig

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data" / "synthetic"


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    """Run the test once per available kernel backend."""
    previous = kernels.backend_name()
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


def tiny_config(**kw) -> ModelConfig:
    base = dict(vocab_size=12, type_count=3, max_width=6, embed_dim=8, lstm_hidden=8,
                affine_hidden=8, width_embed_dim=4)
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(seed: int = 0, **kw) -> BiaffineNER:
    return BiaffineNER(tiny_config(**kw), np.random.default_rng(seed))


TINY_ITEMS = [
    (np.array([2, 3, 4, 5, 6]), [Span(1, 2, 1), Span(3, 3, 2)]),
    (np.array([7, 8, 2]), [Span(0, 1, 2)]),
    (np.array([9, 10, 11, 4]), []),
]


# One line per acceptance criterion, collected by tests/test_acceptance.py and
# repeated in the terminal summary so the verdicts survive output capture.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
