import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drjcc.analytics import extract_features
from drjcc.config import ConfigError, community_to_dict
from drjcc.synthetic import (
    ARCHETYPE_NAMES,
    GeneratorSpec,
    archetype_counts,
    archetype_template,
    generate_synthetic_community,
    ring_neighbors,
    tou_prices,
)


def test_same_seed_identical():
    a_cfg, a_sc = generate_synthetic_community(GeneratorSpec(prosumers=4, samples=5), seed=9)
    b_cfg, b_sc = generate_synthetic_community(GeneratorSpec(prosumers=4, samples=5), seed=9)
    assert community_to_dict(a_cfg) == community_to_dict(b_cfg)
    for pid in a_cfg.ids:
        assert np.array_equal(a_sc[pid].samples, b_sc[pid].samples)
        assert np.array_equal(a_sc[pid].nominal_load, b_sc[pid].nominal_load)


def test_different_seeds_differ():
    _, a = generate_synthetic_community(GeneratorSpec(prosumers=2, samples=3), seed=1)
    _, b = generate_synthetic_community(GeneratorSpec(prosumers=2, samples=3), seed=2)
    assert not np.array_equal(a["p01"].samples, b["p01"].samples)


def test_residential_only_peaks_in_evening():
    cfg, scen = generate_synthetic_community(GeneratorSpec(prosumers=4, shares=(1, 0, 0, 0)), seed=5)
    for pid in cfg.ids:
        assert cfg[pid].archetype == "Residential"
        assert 17 <= extract_features(scen[pid].nominal_load).peak_hour <= 20


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_device_ranges(seed):
    cfg, _ = generate_synthetic_community(GeneratorSpec(prosumers=5, samples=2), seed)
    for pc in cfg.prosumers:
        assert 10 <= pc.pb_max <= 40 and pc.pb_min == -pc.pb_max
        assert 10 <= pc.ps_max <= 40
        assert (pc.pe_min, pc.pe_max) == (-5.0, 5.0)
        assert 0.85 <= pc.eta <= 0.95
    assert np.all(cfg.prices.c_q >= cfg.prices.c_p)


def test_templates_have_unit_energy_and_archetype_peaks():
    expected_peak = {"Residential": 18, "Commercial": 11, "Industrial": 17, "Public": 18}
    for name in ARCHETYPE_NAMES:
        t = archetype_template(name)
        assert t.sum() == pytest.approx(1.0)
        assert extract_features(t).peak_hour == expected_peak[name]


def test_prices():
    c = tou_prices(24)
    assert c[3] == 0.06 and c[10] == 0.09 and c[19] == 0.12


def test_counts_largest_remainder():
    assert archetype_counts((0.4, 0.3, 0.2, 0.1), 10) == [4, 3, 2, 1]
    assert sum(archetype_counts((0.25,) * 4, 7)) == 7


def test_ring_is_symmetric():
    nbrs = ring_neighbors(6, 2)
    for n, ms in enumerate(nbrs):
        assert len(ms) == 2
        for m in ms:
            assert n in nbrs[m]
    assert ring_neighbors(3, 10) == [[1, 2], [0, 2], [0, 1]]
    assert ring_neighbors(1, 4) == [[]]


@pytest.mark.parametrize(
    "kwargs", [dict(prosumers=0), dict(shares=(1, 1, 0, 0)), dict(shares=(1, 0)), dict(samples=0), dict(load_scale=0)]
)
def test_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        GeneratorSpec(**kwargs)
