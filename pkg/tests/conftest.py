"""Shared fixtures; heavy reference runs are computed once per session."""
from __future__ import annotations

import pytest

from parity_qst.protocol import (
    TransferConfig,
    reference_dicke,
    reference_model,
    run_population_inversion,
)
from parity_qst.models import QrsParams
from parity_qst.spectral import analyze_qrs

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def qrs_params():
    return QrsParams(g=(0.3, 0.3), n_fock=16)


@pytest.fixture(scope="session")
def qrs_es(qrs_params):
    return analyze_qrs(qrs_params)


@pytest.fixture(scope="session")
def ref_model():
    return reference_model()


@pytest.fixture(scope="session")
def ref_dicke():
    return reference_dicke()


@pytest.fixture(scope="session")
def inversion(ref_model):
    return run_population_inversion(TransferConfig(ref_model))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
