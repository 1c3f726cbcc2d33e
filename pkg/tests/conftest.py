"""Shared fixtures: a deterministic matrix corpus and hypothesis settings."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from panelhte.model import generate_noise, generate_signal

settings.register_profile(
    "suite",
    derandomize=True,
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

# Shapes for the shared (A, E) corpus; all within the 40x60 desk-scale cap.
_CORPUS_SHAPES = ((2, 2), (3, 5), (5, 3), (8, 8), (10, 17), (17, 10),
                  (24, 36), (40, 60), (1, 9), (9, 1), (31, 31), (12, 40))


def _corpus_pairs():
    """Deterministic (A, E) pairs spanning shapes, spectra, and scales.

    Mixes raw Gaussian matrices with exactly low-rank planted signals and
    bounded noise so classical perturbation inequalities get exercised on
    both generic and structured inputs.
    """
    rng = np.random.default_rng(20260819)
    pairs = []
    for n, m in _CORPUS_SHAPES:
        a = rng.standard_normal((n, m))
        e = 0.5 * rng.standard_normal((n, m))
        pairs.append((a, e))
    for n, m, r in ((6, 9, 2), (20, 30, 3), (40, 60, 4), (15, 15, 1)):
        sig = generate_signal(n, m, r, 1.0, "geometric_decay", rng)
        noi = generate_noise(n, m, 0.3, "uniform_symmetric", rng)
        pairs.append((sig.a0, noi.e0))
        pairs.append((sig.a1, noi.e1))
    # degenerate corners: zero signal, zero perturbation, rank-1 spike
    z = np.zeros((4, 7))
    pairs.append((z, rng.standard_normal((4, 7))))
    pairs.append((rng.standard_normal((7, 4)), np.zeros((7, 4))))
    spike = np.zeros((5, 5))
    spike[0, 0] = 3.0
    pairs.append((spike, 0.1 * rng.standard_normal((5, 5))))
    return tuple((a.copy(), e.copy()) for a, e in pairs)


@pytest.fixture(scope="session")
def corpus():
    return _corpus_pairs()
