import numpy as np
import pytest

from cids.model import (
    AllZeroPosteriorError,
    ContextPosterior,
    DiscreteCPOMDP,
    LightDarkParams,
    model_from_json,
    model_to_json,
    obs_variance,
    posterior_entropy_bits,
    posterior_update,
    step_reward,
    validate_model,
)


def tiny_model(**overrides):
    base = dict(
        num_states=2,
        num_actions=1,
        num_obs=2,
        num_contexts=1,
        transition=np.eye(2)[None, None].repeat(1, axis=0),
        emission=np.full((1, 2, 2), 0.5),
        reward=np.zeros((1, 2, 1)),
        init=np.array([[0.5, 0.5]]),
        horizon=3,
        r_max=1.0,
    )
    base.update(overrides)
    return DiscreteCPOMDP(**base)


def test_validate_clean_model():
    assert validate_model(tiny_model()) == []


def test_validate_flags_bad_transition_row():
    t = np.eye(2)[None, None].copy()
    t[0, 0, 0] = np.array([0.5, 0.4])
    bad = validate_model(tiny_model(transition=t))
    assert len(bad) == 1
    assert "transition[c=0][a=0][s=0]" in bad[0]
    assert "-1.000e-01" in bad[0]


def test_validate_flags_reward_bound():
    r = np.zeros((1, 2, 1))
    r[0, 1, 0] = 2.0
    bad = validate_model(tiny_model(reward=r))
    assert len(bad) == 1
    assert "reward[c=0][s=1][a=0]" in bad[0] and "r_max" in bad[0]


def test_validate_flags_negative_emission():
    e = np.full((1, 2, 2), 0.5)
    e[0, 0] = [1.5, -0.5]
    bad = validate_model(tiny_model(emission=e))
    assert any("negative" in v for v in bad)


def test_model_json_roundtrip():
    m = tiny_model()
    m2 = model_from_json(model_to_json(m))
    assert m2.num_states == m.num_states and m2.horizon == m.horizon
    np.testing.assert_array_equal(m2.transition, m.transition)
    np.testing.assert_array_equal(m2.init, m.init)


def test_model_json_rejects_unknown_schema():
    text = model_to_json(tiny_model()).replace("cpomdp-v1", "cpomdp-v9")
    with pytest.raises(ValueError, match="schema"):
        model_from_json(text)


def test_posterior_update_bayes_arithmetic():
    prior = ContextPosterior(np.array([0.5, 0.5]))
    post = posterior_update(prior, np.log([0.3, 0.1]))
    np.testing.assert_allclose(post.probs, [0.75, 0.25], atol=1e-15)


def test_posterior_update_point_mass_absorbs():
    prior = ContextPosterior(np.array([1.0, 0.0]))
    post = posterior_update(prior, np.array([-3.7, 12.0]))
    np.testing.assert_array_equal(post.probs, [1.0, 0.0])


def test_posterior_update_symmetric():
    prior = ContextPosterior(np.array([0.5, 0.5]))
    post = posterior_update(prior, np.array([-2.0, -2.0]))
    np.testing.assert_allclose(post.probs, [0.5, 0.5], atol=1e-15)


def test_posterior_update_all_zero_raises():
    prior = ContextPosterior(np.array([1.0, 0.0]))
    with pytest.raises(AllZeroPosteriorError):
        posterior_update(prior, np.array([-np.inf, 0.0]))


def test_posterior_update_shift_invariance():
    rng = np.random.default_rng(7)
    for _ in range(50):
        p = rng.dirichlet(np.ones(4))
        ll = rng.normal(size=4) * 10.0
        base = posterior_update(ContextPosterior(p), ll)
        shifted = posterior_update(ContextPosterior(p), ll + rng.normal() * 50.0)
        np.testing.assert_allclose(base.probs, shifted.probs, atol=1e-12)


def test_posterior_update_revealing_observation_zeroes_entropy():
    prior = ContextPosterior.uniform(2)
    post = posterior_update(prior, np.array([0.0, -np.inf]))
    assert posterior_entropy_bits(post) == 0.0
    np.testing.assert_array_equal(post.probs, [1.0, 0.0])


def test_entropy_bits_values():
    assert posterior_entropy_bits(ContextPosterior(np.array([0.5, 0.5]))) == pytest.approx(1.0)
    assert posterior_entropy_bits(ContextPosterior(np.array([1.0, 0.0]))) == 0.0
    # direct evaluation of -sum p log2 p
    assert posterior_entropy_bits(ContextPosterior(np.array([0.75, 0.25]))) == pytest.approx(
        0.8112781244591328, abs=1e-12
    )


def test_entropy_maximized_at_uniform():
    rng = np.random.default_rng(3)
    for n in (2, 3, 5):
        top = posterior_entropy_bits(ContextPosterior.uniform(n))
        assert top == pytest.approx(np.log2(n))
        for _ in range(100):
            p = rng.dirichlet(np.ones(n))
            assert posterior_entropy_bits(ContextPosterior(p)) <= top + 1e-12


def test_lightdark_params_invariants():
    with pytest.raises(ValueError):
        LightDarkParams(sigma_l2=2.0, sigma_d2=1.0)
    with pytest.raises(ValueError):
        LightDarkParams(sigma_u2=0.0)
    with pytest.raises(ValueError):
        LightDarkParams(discount=0.0)


def test_lightdark_region_conventions():
    p = LightDarkParams()
    # dark region is closed at the boundary in both contexts
    assert obs_variance(p, 0.0, 0) == p.sigma_d2
    assert obs_variance(p, 0.0, 1) == p.sigma_d2
    assert obs_variance(p, 0.5, 0) == p.sigma_l2
    assert obs_variance(p, -0.5, 1) == p.sigma_l2
    # strict reward/penalty inequalities
    assert step_reward(p, 1.0, 0) == 0.0
    assert step_reward(p, 2.0, 0) == p.r_plus
    assert step_reward(p, 0.5, 0) == p.r_minus
    assert step_reward(p, -2.0, 1) == p.r_plus
    assert step_reward(p, 0.0, 1) == 0.0
    assert step_reward(p, 0.5, 1) == p.r_minus
