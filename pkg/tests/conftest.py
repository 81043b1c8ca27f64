import numpy as np
import pytest

from optostirling.sweep import CycleSetup, SweepSpec, compression_ratio, run_sweep, run_cycle

# Hot-bath temperatures (K) at T_cold = 0.22 K and equally spaced spring levels.
T_HOT_VALUES = (0.24, 0.26, 0.3, 0.35, 0.4, 0.45, 0.5)
SPRING_LEVELS = tuple(np.linspace(0.01, 0.08, 8))


@pytest.fixture(scope="session")
def fig3_run():
    """Converged fig3 feedback cycle at the preset defaults."""
    return run_cycle(CycleSetup.from_preset("fig3", "feedback"))


@pytest.fixture(scope="session")
def fig3_setup():
    return CycleSetup.from_preset("fig3", "feedback")


@pytest.fixture(scope="session")
def temperature_sweep(fig3_setup, fig3_run):
    ratios = [t / fig3_setup.levels[1] for t in T_HOT_VALUES]
    return run_sweep(SweepSpec("TemperatureRatio", ratios, fig3_setup),
                     landscape=fig3_run.landscape)


@pytest.fixture(scope="session")
def compression_sweep(fig3_setup, fig3_run):
    ratios = [compression_ratio(d, -d) for d in SPRING_LEVELS]
    return run_sweep(SweepSpec("CompressionRatio", ratios, fig3_setup),
                     landscape=fig3_run.landscape)
