import numpy as np
import pytest

from iotprice.link import Allocation, PriceVector
from iotprice.scenario import ScenarioConfig, generate_scenario


def small_config(**kw) -> ScenarioConfig:
    """One InP with a macro and a femto BS, one sensor per BS, one ISP with two users."""
    base = dict(num_inps=1, bs_per_inp=2, sensors_per_bs=1, num_isps=1, users_per_isp=2,
                dl_subcarriers=4, ul_subcarriers=4, dl_codebooks=4, ul_codebooks=4, reuse_limit=2)
    base.update(kw)
    return ScenarioConfig(**base)


def degenerate_config(**kw) -> ScenarioConfig:
    """1 InP, 1 BS, 1 sensor, 1 ISP with 1 user, one codebook on one subcarrier each way."""
    base = dict(num_inps=1, bs_per_inp=1, sensors_per_bs=1, num_isps=1, users_per_isp=1,
                dl_subcarriers=1, ul_subcarriers=1, dl_codebooks=1, ul_codebooks=1,
                dl_spread=1, ul_spread=1, reuse_limit=1)
    base.update(kw)
    return ScenarioConfig(**base)


def random_topology_config(rng) -> ScenarioConfig:
    I = int(rng.integers(1, 4))
    N = [int(rng.integers(2, 6)) for _ in range(I)]
    M = [int(rng.integers(2, 6)) for _ in range(I)]
    return ScenarioConfig(
        num_inps=I,
        bs_per_inp=[int(rng.integers(1, 4)) for _ in range(I)],
        sensors_per_bs=int(rng.integers(1, 4)),
        num_isps=int(rng.integers(1, 4)),
        users_per_isp=int(rng.integers(1, 4)),
        dl_subcarriers=N, ul_subcarriers=M,
        dl_codebooks=[int(rng.integers(1, n + 1)) for n in N],
        ul_codebooks=[int(rng.integers(1, m + 1)) for m in M],
        dl_spread=1, ul_spread=1,
        reuse_limit=int(rng.integers(1, 4)))


def random_allocation(s, rng, density=0.5) -> Allocation:
    """Arbitrary (not necessarily feasible) allocation with binary indicators on valid codebooks."""
    t = s.topology
    a = Allocation.zeros(s, PriceVector.from_flat(s, rng.random(PriceVector.size(s)) * PriceVector.bounds(s)[1]))
    a.rho_dl = (rng.random(a.rho_dl.shape) < density) * t.dl_valid()[:, None, :].astype(float)
    a.rho_ul = (rng.random(a.rho_ul.shape) < density) * t.ul_valid().astype(float)
    a.p_dl = rng.random(a.p_dl.shape) * s.economics.power_caps[:, None, None] / a.p_dl.shape[2]
    a.p_ul = rng.random(a.p_ul.shape) * s.economics.battery_caps[:, None] / a.p_ul.shape[1]
    a.alpha = (rng.random(a.alpha.shape) < density).astype(float)
    return a


@pytest.fixture(scope="session")
def default_scenario():
    return generate_scenario(seed=0)


@pytest.fixture(scope="session")
def small_scenario():
    return generate_scenario(small_config(), seed=3)


@pytest.fixture(scope="session")
def degenerate_scenario():
    return generate_scenario(degenerate_config(), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
