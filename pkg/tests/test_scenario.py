import math

import numpy as np
import pytest

from iotprice.scenario import (CodebookCapacityError, ConfigError, ScenarioConfig, build_codebook_map,
                               generate_scenario, load_scenario, validate_scenario)
from conftest import degenerate_config, small_config


def test_default_topology_counts(default_scenario):
    t = default_scenario.topology
    assert (t.num_inps, t.num_bs, t.num_isps, t.num_users, t.num_sensors) == (2, 4, 2, 8, 12)
    assert t.dl_subcarriers == (4, 4) and t.ul_subcarriers == (4, 4)
    assert list(t.bs_inp) == [0, 0, 1, 1]
    assert list(t.user_isp) == [0, 0, 0, 0, 1, 1, 1, 1]


def test_generation_is_deterministic_per_seed():
    a, b, c = generate_scenario(seed=5), generate_scenario(seed=5), generate_scenario(seed=6)
    assert np.array_equal(a.channels.dl_gain, b.channels.dl_gain)
    assert np.array_equal(a.channels.ul_gain, b.channels.ul_gain)
    assert not np.array_equal(a.channels.dl_gain, c.channels.dl_gain)


def test_scenario_arrays_are_read_only(default_scenario):
    with pytest.raises(ValueError):
        default_scenario.channels.dl_gain[0, 0, 0] = 1.0


def test_codebook_map_lexicographic_subsets():
    lay = build_codebook_map(4, 6, 2, B=2)
    want = [[1, 1, 0, 0], [1, 0, 1, 0], [1, 0, 0, 1], [0, 1, 1, 0], [0, 1, 0, 1], [0, 0, 1, 1]]
    assert lay.incidence.tolist() == want
    assert np.allclose(lay.split.sum(axis=1), 1.0)
    assert lay.split.shape == (2, 4, 6)


def test_codebook_capacity_error():
    with pytest.raises(CodebookCapacityError):
        build_codebook_map(4, math.comb(4, 2) + 1, 2)


@pytest.mark.parametrize("N,d_f", [(3, 0), (3, 4)])
def test_codebook_bad_spread(N, d_f):
    with pytest.raises(ValueError):
        build_codebook_map(N, 1, d_f)


def test_default_scenario_validates(default_scenario):
    rep = validate_scenario(default_scenario)
    assert rep.ok, str(rep)


def test_config_round_trip():
    cfg = small_config(regulator_bw_price=0.02)
    back = ScenarioConfig.from_string(cfg.to_string())
    s1, s2 = generate_scenario(cfg, 1), generate_scenario(back, 1)
    assert np.array_equal(s1.channels.dl_gain, s2.channels.dl_gain)
    assert np.allclose(s1.economics.regulator_bw_price, 0.02)


def test_config_file(tmp_path):
    p = tmp_path / "s.cfg"
    p.write_text(degenerate_config().to_string())
    s = load_scenario(p, seed=2)
    assert s.topology.num_bs == 1 and s.topology.num_users == 1


@pytest.mark.parametrize("text,field", [
    ("[topology]\nnum_inps = 0\n", "topology.num_inps"),
    ("[topology]\nbogus = 1\n", "topology.bogus"),
    ("[weird]\nx = 1\n", "weird"),
    ("[channels]\nnoise_dl = -1\n", "channels.noise_dl"),
    ("[codebooks]\ndl_spread = 9\n", "codebooks.dl_spread"),
    ("[economics]\nprice_cap = abc\n", "economics.price_cap"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig.from_string(text)
    assert field in str(exc.value)


def test_capacity_error_surfaces_as_config_error():
    with pytest.raises(ConfigError):
        generate_scenario(small_config(dl_codebooks=7, dl_spread=2))


def test_per_inp_lists():
    s = generate_scenario(ScenarioConfig(num_inps=2, bs_per_inp=[1, 3], dl_codebooks=[3, 5]), 0)
    t = s.topology
    assert t.bs_per_inp == (1, 3) and t.dl_codebooks == (3, 5)
    assert t.dl_valid().sum() == 3 + 3 * 5


def test_validation_flags_bad_split(default_scenario):
    from dataclasses import replace
    lam = np.array(default_scenario.codebooks.dl_split)
    lam[0, 0, 0] = 0.9
    bad = replace(default_scenario, codebooks=replace(default_scenario.codebooks, dl_split=lam))
    rep = validate_scenario(bad)
    assert not rep.ok
    assert any("split" in p for p, _ in rep.issues)


def test_power_caps_macro_and_femto(default_scenario):
    assert default_scenario.economics.power_caps.tolist() == [50.0, 1.0, 50.0, 1.0]


def test_with_price_cap_and_weights(default_scenario):
    s = default_scenario.with_price_cap(0.3).with_weights(isp=2.0)
    assert s.economics.price_cap == 0.3
    assert np.all(s.economics.weights.isp == 2.0)
    assert np.all(s.economics.weights.user == 1.0)
    assert default_scenario.economics.price_cap == 1.0
