"""Shared fixtures: one desk-scale path, box and noise model per session."""

from __future__ import annotations

import numpy as np
import pytest

from vortexlab import roughpath as rpm
from vortexlab import spectral as sp
from vortexlab import transform as tr


@pytest.fixture(scope="session")
def fine_grid() -> rpm.TimeGrid:
    return rpm.TimeGrid(1.0, 4096)


@pytest.fixture(scope="session")
def brownian(fine_grid) -> rpm.DrivingPath:
    return rpm.sample_brownian(42, 2, fine_grid)


@pytest.fixture(scope="session")
def rp_ito(brownian) -> rpm.RoughPath:
    return rpm.enhance(brownian, rpm.ITO, alpha=0.4)


@pytest.fixture(scope="session")
def rp_strat(brownian) -> rpm.RoughPath:
    return rpm.enhance(brownian, rpm.STRATONOVICH, alpha=0.4)


@pytest.fixture(scope="session")
def box16() -> sp.BoxGrid:
    return sp.BoxGrid(32.0, 16)


@pytest.fixture(scope="session")
def box8() -> sp.BoxGrid:
    return sp.BoxGrid(32.0, 8)


@pytest.fixture(scope="session")
def noise_pair(box16) -> tr.NoiseModel:
    k1 = sp.gaussian_convolution_operator(box16, 2.0, 0.1)
    k2 = sp.gaussian_convolution_operator(box16, 3.0, 0.1)
    return tr.NoiseModel((0.8, -0.9), (k1, k2), require_dominance=True)


@pytest.fixture(scope="session")
def noise_scalar() -> tr.NoiseModel:
    return tr.NoiseModel((0.4, -0.3), (None, None))


@pytest.fixture(scope="session")
def small_u0(box16, noise_pair, brownian) -> sp.SpectralField:
    """Divergence-free mean-zero random data at ten times the gate margin."""
    series = tr.bound_series(noise_pair, brownian, 1.8, 1.0 / (2.0 / 1.8 - 1.0 / 3.0))
    u0 = sp.random_field(box16, 7, divergence_free=True, mean_zero=True)
    return u0 * (0.01 / (10.0 * series.sup) / sp.lp_norm(u0, 1.5))


def all_pairs_max_defect(rp: rpm.RoughPath, defect_fn, chunk: int = 512) -> float:
    """Max of |defect_fn(u, vs)| over every grid pair, chunked by left node."""
    steps = rp.grid.steps
    worst = 0.0
    for u in range(steps):
        vs = np.arange(u + 1, steps + 1)
        for lo in range(0, vs.size, chunk * 8):
            block = vs[lo : lo + chunk * 8]
            worst = max(worst, defect_fn(u, block))
    return worst
