"""Shared fixtures: full-length records for the headline numbers, 1 us records elsewhere."""

import numpy as np
import pytest

from core.models import (
    ChainConfig,
    DlfmSpec,
    ChirpParams,
    FhSpec,
    LfmSpec,
    NlfmSpec,
    PhaseCodedSpec,
)

FS = 64e9
FULL_DURATION = 4e-6
SHORT_DURATION = 1e-6


@pytest.fixture
def chain() -> ChainConfig:
    return ChainConfig()


@pytest.fixture
def short_chain() -> ChainConfig:
    return ChainConfig(duration=SHORT_DURATION)


@pytest.fixture
def lfm() -> LfmSpec:
    return LfmSpec()


@pytest.fixture
def short_lfm() -> LfmSpec:
    return LfmSpec(period=SHORT_DURATION)


@pytest.fixture
def short_family():
    """One spec per waveform family, each fitting a 1 us record."""
    return [
        LfmSpec(period=SHORT_DURATION),
        NlfmSpec(period=SHORT_DURATION),
        DlfmSpec(
            up=ChirpParams(f_start=2.5e9, f_stop=3.7e9, period=SHORT_DURATION),
            down=ChirpParams(f_start=3.7e9, f_stop=2.5e9, period=SHORT_DURATION),
        ),
        FhSpec(),
        PhaseCodedSpec(n_bits=100, period=SHORT_DURATION),
    ]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
