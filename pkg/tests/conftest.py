from pathlib import Path

import pytest

from tinybat import fixture, quantize

REPO = Path(__file__).resolve().parents[1]
ASSETS = REPO / "assets" / "deepfish-tiny"


@pytest.fixture(scope="session")
def tiny_model():
    return fixture.deepfish_tiny_model()


@pytest.fixture(scope="session")
def tiny_ranges(tiny_model):
    return quantize.collect_ranges(
        tiny_model.graph, tiny_model.weights, fixture.calibration_inputs()
    )


@pytest.fixture(scope="session")
def tiny_quantized(tiny_model, tiny_ranges):
    return quantize.quantize_model(
        tiny_model.graph, tiny_model.weights, tiny_ranges, name=tiny_model.name
    )


@pytest.fixture(scope="session")
def assets_dir():
    return ASSETS


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import CRITERION_RESULTS
    except ImportError:
        return
    if CRITERION_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_RESULTS:
            terminalreporter.write_line(line)
