import numpy as np
import pytest

from data_manager import load_calibration
from utils.cert import CertMode
from utils.curve import Curve
from utils.handshake import provision, run_lockstep


@pytest.fixture(scope="session")
def p256():
    return Curve.from_preset("P-256")


@pytest.fixture(scope="session")
def toy():
    return Curve.from_preset("toy23")


@pytest.fixture(scope="session")
def table():
    return load_calibration()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def deployment(p256):
    """Provisioned client/server pairs on P-256, one per certificate mode."""
    return {mode: provision(p256, 1, mode) for mode in (CertMode.FULL, CertMode.CACHED)}


@pytest.fixture(scope="session")
def lockstep(deployment):
    """(client, server, wire) of a perfect-channel handshake, per mode."""
    return {mode: run_lockstep(pair.client, pair.server) for mode, pair in deployment.items()}
