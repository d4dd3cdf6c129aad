import numpy as np
import pytest

import pandmort.baseline as bl
import pandmort.synthetic as sy

COUNTRIES = ("AAA", "BBB")
AGES = np.arange(0, 91)
YEARS = np.arange(1970, 2020)


@pytest.fixture(scope="session")
def baseline_truth():
    return sy.make_baseline_truth(COUNTRIES, AGES, YEARS, seed=5)


@pytest.fixture(scope="session")
def annual_panel(baseline_truth):
    return sy.sample_annual_panel(baseline_truth, exposure=1e6, seed=6)


@pytest.fixture(scope="session")
def baseline_model(annual_panel):
    return bl.calibrate_baseline(annual_panel)


@pytest.fixture(scope="session")
def pandemic_truth():
    return sy.make_pandemic_truth(AGES, seed=3, amplitude=0.35)


@pytest.fixture(scope="session")
def phi_truth():
    return sy.seasonal_phi(0.18)


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    """Raw-format synthetic dataset on disk, shared across parser tests."""
    outdir = tmp_path_factory.mktemp("rawdata")
    truth, pandemic, phi = sy.write_synthetic_dataset(str(outdir), seed=1234)
    return {"dir": outdir, "truth": truth, "pandemic": pandemic, "phi": phi}
