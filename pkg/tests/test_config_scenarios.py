import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drjcc.config import (
    AdmmConfig,
    AmbiguitySpec,
    ConfigError,
    ProsumerConfig,
    RiskSpec,
    community_from_dict,
    community_to_dict,
    load_community_config,
    save_community_config,
)
from drjcc.scenarios import (
    ProfileError,
    ScenarioSet,
    load_profiles,
    split_train_test,
    write_profiles,
)
from drjcc.synthetic import GeneratorSpec, generate_synthetic_community

from conftest import make_scenarios, toy_community


def minimal_document(**prosumer):
    doc = {
        "horizon": 2,
        "prices": {"c_p": [0.1, 0.1], "c_q": [0.2, 0.2]},
        "prosumers": [{"id": "a", "ps_ref": [0, 0], **prosumer}],
    }
    return doc


def test_minimal_single_prosumer():
    cfg = community_from_dict(minimal_document())
    assert len(cfg.prosumers) == 1
    assert cfg["a"].neighbors == ()
    assert cfg.edges() == []


def test_gamma_b_must_be_positive():
    with pytest.raises(ConfigError, match="gamma_b"):
        community_from_dict(minimal_document(gamma_b=0))


@pytest.mark.parametrize(
    "field, value, needle",
    [
        ("gamma_s", -1.0, "gamma_s"),
        ("eta", 1.5, "eta"),
        ("E_init", 500.0, "E_init"),
        ("p_min", 100.0, "p_min"),
        ("ps_ref", [30, 0], "ps_ref"),
    ],
)
def test_invariants(field, value, needle):
    with pytest.raises(ConfigError, match=needle):
        community_from_dict(minimal_document(**{field: value}))


def test_asymmetric_neighbors_rejected():
    doc = minimal_document(neighbors=["b"])
    doc["prosumers"].append({"id": "b", "ps_ref": [0, 0]})
    doc["prices"]["p2p_default"] = [0.08, 0.08]
    with pytest.raises(ConfigError, match="symmetric"):
        community_from_dict(doc)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        community_from_dict(minimal_document(capacity=3))


def test_missing_p2p_price_rejected():
    doc = minimal_document(neighbors=["b"])
    doc["prosumers"].append({"id": "b", "neighbors": ["a"], "ps_ref": [0, 0]})
    with pytest.raises(ConfigError, match="P2P price"):
        community_from_dict(doc)


def test_admm_and_risk_validation():
    with pytest.raises(ConfigError):
        AdmmConfig(sigma=0)
    with pytest.raises(ConfigError):
        AdmmConfig(max_iter=0)
    with pytest.raises(ConfigError):
        RiskSpec(epsilon=1.0)
    with pytest.raises(ConfigError):
        AmbiguitySpec(rho=-0.1)


def test_zero_support_rows_mean_unbounded():
    amb = AmbiguitySpec(0.1, C=np.zeros((2, 3)), d=np.zeros(2))
    assert not amb.bounded


def test_generated_ranges_accepted(tmp_path):
    cfg, _ = generate_synthetic_community(GeneratorSpec(), seed=1)
    assert len(cfg.prosumers) == 10
    for pc in cfg.prosumers:
        assert 10 <= pc.pb_max <= 40
        assert pc.pe_max == 5.0
    path = tmp_path / "c.json"
    save_community_config(cfg, path)
    back = load_community_config(path)
    assert community_to_dict(back) == community_to_dict(cfg)


def test_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_community_config(path)
    path.write_text(json.dumps([1, 2]))
    with pytest.raises(ConfigError):
        load_community_config(path)


# ------------------------------------------------------------------ scenarios

def test_identical_days_have_zero_deviation():
    sc = make_scenarios([[1.0, 2.0, 3.0]] * 2)
    assert sc.count == 2
    assert np.all(sc.samples == 0)


def test_mean_and_residual():
    sc = make_scenarios([[1.0, 5.0], [3.0, 5.0]])
    assert sc.nominal_load[0] == 2.0
    np.testing.assert_array_equal(sc.samples[:, 0], [-1.0, 1.0])


def test_scale_floor():
    sc = make_scenarios([[0.0, 4.0]], [[0.0, 1.0]])
    np.testing.assert_array_equal(sc.scale, [0.1, 3.0])
    np.testing.assert_allclose(sc.scale * (sc.mu + sc.normalized()[0]), sc.realized_net()[0])


def write_rows(path, rows):
    path.write_text("prosumer_id,day,hour,load_kw,pv_kw\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))


def test_profile_errors(tmp_path):
    cfg = toy_community(T=2)
    path = tmp_path / "p.csv"
    write_rows(path, [("p99", "d0", 0, 1, 0), ("p99", "d0", 1, 1, 0)])
    with pytest.raises(ProfileError, match="missing prosumer"):
        load_profiles(path, cfg)
    write_rows(path, [("n0", "d0", 0, 1, 0)])
    with pytest.raises(ProfileError, match="ragged"):
        load_profiles(path, cfg)
    write_rows(path, [("n0", "d0", 0, 1, 0), ("n0", "d0", 0, 2, 0)])
    with pytest.raises(ProfileError, match="duplicate"):
        load_profiles(path, cfg)
    write_rows(path, [("n0", "d0", 0, "x", 0), ("n0", "d0", 1, 1, 0)])
    with pytest.raises(ProfileError, match="non-numeric"):
        load_profiles(path, cfg)
    path.write_text("id,day\n")
    with pytest.raises(ProfileError, match="header"):
        load_profiles(path, cfg)


def test_profile_round_trip(tmp_path):
    cfg, scen = generate_synthetic_community(GeneratorSpec(prosumers=3, samples=5, horizon=4, degree=2), seed=2)
    path = tmp_path / "p.csv"
    write_profiles(scen, path)
    back = load_profiles(path, cfg)
    assert back.days == scen.days
    for pid in cfg.ids:
        np.testing.assert_allclose(back[pid].realized_net(), scen[pid].realized_net(), rtol=1e-11, atol=1e-11)
        np.testing.assert_allclose(back[pid].scale, scen[pid].scale, rtol=1e-11)


def test_sample_counts_must_agree():
    with pytest.raises(ProfileError):
        ScenarioSet({"a": make_scenarios([[1.0]] * 2), "b": make_scenarios([[1.0]] * 3)})


def test_split_sizes_and_disjoint():
    cfg, scen = generate_synthetic_community(GeneratorSpec(prosumers=2, samples=10, horizon=3, degree=1), seed=0)
    train, test = split_train_test(scen, 0.5, seed=4)
    assert train.sample_count == 5 and test.sample_count == 5
    assert set(train.days).isdisjoint(test.days)
    assert set(train.days) | set(test.days) == set(scen.days)


def test_split_degenerate():
    _, scen = generate_synthetic_community(GeneratorSpec(prosumers=1, samples=100, horizon=2, degree=0), seed=0)
    train, test = split_train_test(scen, 0.99, seed=0)
    assert test.sample_count == 1
    with pytest.raises(ValueError):
        split_train_test(scen, 0.999, seed=0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), frac=st.floats(0.2, 0.8))
def test_split_deterministic_and_consistent(seed, frac):
    _, scen = generate_synthetic_community(GeneratorSpec(prosumers=2, samples=12, horizon=3, degree=1), seed=1)
    a_train, a_test = split_train_test(scen, frac, seed)
    b_train, b_test = split_train_test(scen, frac, seed)
    assert a_train.days == b_train.days and a_test.days == b_test.days
    for pid in scen.ids:
        # training deviations are centered and realized demands are preserved
        np.testing.assert_allclose(a_train[pid].samples.mean(axis=0), 0, atol=1e-10)
        idx = [scen.days.index(d) for d in a_test.days]
        np.testing.assert_allclose(a_test[pid].realized_net(), scen[pid].realized_net()[idx], atol=1e-10)


def test_prosumer_defaults_valid():
    pc = ProsumerConfig(id="x")
    assert pc.E_min <= pc.E_init <= pc.E_max
