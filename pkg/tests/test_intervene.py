import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from medshift.errors import ConfigError, PositivityError
from medshift.intervene import (IDENTITY, InterventionSpec, check_common_support, lower_support_index,
                                mtp_map, post_density, shift_targets)

BIN = np.array([0.0, 1.0])
FOUR = np.arange(4.0)


def test_odds_tilt_identity():
    g = np.array([[0.7, 0.3], [0.1, 0.9]])
    assert np.array_equal(post_density(InterventionSpec("odds_tilt", 1.0), g, BIN), g)


def test_odds_tilt_hand_value():
    gd = post_density(InterventionSpec("odds_tilt", 2.0), np.array([[0.5, 0.5]]), BIN)
    assert gd[0, 1] == pytest.approx(2.0 / 3.0, abs=1e-15)


@pytest.mark.parametrize("delta", [0.1, 2.0, 50.0])
def test_odds_tilt_keeps_degenerate(delta):
    gd = post_density(InterventionSpec("odds_tilt", delta), np.array([[1.0, 0.0]]), BIN)
    assert gd[0, 1] == 0.0


def test_spec_validation():
    with pytest.raises(ConfigError):
        InterventionSpec("odds_tilt", 0.0)
    with pytest.raises(ConfigError):
        InterventionSpec("shift", 1.5)
    with pytest.raises(ConfigError):
        InterventionSpec("swap", 1.0)
    with pytest.raises(ConfigError):
        InterventionSpec("shift", 4).check_levels(4)
    with pytest.raises(ConfigError):
        InterventionSpec("odds_tilt", 2.0).check_levels(3)


def test_identity_equivalents():
    for s in (IDENTITY, InterventionSpec("odds_tilt", 1.0), InterventionSpec("exp_tilt", 0.0),
              InterventionSpec("shift", 0)):
        assert s.is_identity
    assert not InterventionSpec("odds_tilt", 1.5).is_identity


def test_json_round_trip():
    s = InterventionSpec("exp_tilt", -0.25)
    assert InterventionSpec.from_json(s.to_json()) == s
    assert s.to_json() == {"kind": "exp_tilt", "delta": -0.25}


def test_mtp_map_examples():
    assert int(mtp_map(1, 2, 0)) == 1
    assert int(mtp_map(1, 0, 0)) == 0
    assert int(mtp_map(1, 1, 0)) == 1
    assert np.array_equal(mtp_map(0, np.arange(4), 0), np.arange(4))


def test_lower_support_threshold():
    g = np.array([[1e-13, 0.5, 0.5 - 1e-13], [0.2, 0.3, 0.5]])
    assert lower_support_index(g).tolist() == [1, 0]
    with pytest.raises(PositivityError):
        lower_support_index(np.zeros((1, 3)))


def test_shift_pushforward_hand():
    g = np.array([[0.1, 0.2, 0.3, 0.4]])
    gd = post_density(InterventionSpec("shift", 1), g, FOUR)
    # 2 -> 1 and 3 -> 2; 0 and 1 stay
    assert np.allclose(gd, [[0.1, 0.2 + 0.3, 0.4, 0.0]])
    assert shift_targets(InterventionSpec("shift", 1), g).tolist() == [[0, 1, 1, 2]]


def test_shift_respects_lower_support():
    g = np.array([[0.0, 0.5, 0.25, 0.25]])
    gd = post_density(InterventionSpec("shift", 1), g, FOUR)
    assert np.allclose(gd, [[0.0, 0.5, 0.5, 0.0]])


def test_exp_tilt_overflow_safe():
    g = np.array([[0.5, 0.5]])
    gd = post_density(InterventionSpec("exp_tilt", 800.0), g, BIN)
    assert np.all(np.isfinite(gd)) and gd[0, 1] == pytest.approx(1.0)
    gd = post_density(InterventionSpec("exp_tilt", -800.0), g, BIN)
    assert gd[0, 0] == pytest.approx(1.0)


def test_common_support_check():
    g = np.array([[0.5, 0.5, 0.0]])
    check_common_support(np.array([[0.4, 0.6, 0.0]]), g)
    with pytest.raises(PositivityError):
        check_common_support(np.array([[0.4, 0.4, 0.2]]), g)


pmf_rows = arrays(float, (5, 4), elements=st.floats(0.0, 1.0)).map(
    lambda x: (x + 1e-3) / (x + 1e-3).sum(axis=1, keepdims=True))
# probabilities are exactly 0 or clear of the 1e-12 support threshold
prob = st.one_of(st.just(0.0), st.just(1.0), st.floats(1e-9, 1.0 - 1e-9))
pmf_bin = arrays(float, (5,), elements=prob).map(lambda p: np.column_stack([1 - p, p]))


@given(g=pmf_rows, delta=st.floats(-20, 20))
def test_exp_tilt_is_pmf_with_common_support(g, delta):
    gd = post_density(InterventionSpec("exp_tilt", delta), g, FOUR)
    assert np.allclose(gd.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(gd >= 0)
    check_common_support(gd, g)


@given(g=pmf_rows, steps=st.integers(0, 3))
def test_shift_conserves_mass(g, steps):
    gd = post_density(InterventionSpec("shift", steps), g, FOUR)
    assert np.allclose(gd.sum(axis=1), g.sum(axis=1), atol=1e-12)
    check_common_support(gd, g)


@given(g=pmf_bin, delta=st.floats(-30, 30))
def test_exp_tilt_equals_odds_tilt_on_binary(g, delta):
    a = post_density(InterventionSpec("exp_tilt", delta), g, BIN)
    b = post_density(InterventionSpec("odds_tilt", float(np.exp(delta))), g, BIN)
    assert np.allclose(a, b, atol=1e-12)


@given(g=pmf_bin, delta=st.floats(1e-3, 1e3))
def test_odds_tilt_is_pmf(g, delta):
    gd = post_density(InterventionSpec("odds_tilt", delta), g, BIN)
    assert np.allclose(gd.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((gd >= 0) & (gd <= 1))
    check_common_support(gd, g)
