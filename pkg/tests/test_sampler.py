"""NUTS engine: integrator properties, adaptation, and posterior accuracy."""

import math

import numpy as np
import pytest

from ldmlang import plan as pl
from ldmlang import sampler as smp
from ldmlang.datatable import make_table
from ldmlang.errors import (AllDivergentError, InitializationFailedError,
                            SamplerError)

STD_NORMAL = "ProgramName: StdNormal\nx ~ N(0, 1)\n"


def std_normal_grad(u):
    return -0.5 * float(u @ u), -u


def test_leapfrog_conserves_energy_at_small_steps():
    rng = np.random.default_rng(0)
    u = rng.normal(size=3)
    p = rng.normal(size=3)
    inv_mass = np.ones(3)
    h0 = -std_normal_grad(u)[0] + 0.5 * float(p @ p)
    for _ in range(100):
        u, p, v, _ = smp.leapfrog(std_normal_grad, u, p, 0.01, inv_mass)
    h1 = -v + 0.5 * float(p @ p)
    assert abs(h1 - h0) < 1e-3


def test_leapfrog_is_reversible():
    rng = np.random.default_rng(1)
    u0 = rng.normal(size=4)
    p0 = rng.normal(size=4)
    inv_mass = np.full(4, 1.7)
    u, p, _, g = smp.leapfrog(std_normal_grad, u0, p0, 0.3, inv_mass)
    ub, pb, _, _ = smp.leapfrog(std_normal_grad, u, -p, 0.3, inv_mass, g=g)
    np.testing.assert_allclose(ub, u0, atol=1e-12)
    np.testing.assert_allclose(-pb, p0, atol=1e-12)


def test_find_reasonable_epsilon_is_sane():
    rng = np.random.default_rng(2)
    u = np.zeros(2)
    v, g = std_normal_grad(u)
    eps = smp.find_reasonable_epsilon(rng, std_normal_grad, u, v, g, np.ones(2))
    # a standard normal is well behaved; anything near O(1) is acceptable
    assert 0.05 < eps < 10.0


def test_mass_window_schedule():
    assert smp.mass_windows(500) == [(75, 100), (100, 150), (150, 250),
                                     (250, 450)]
    # the windows tile (init, n_warmup - term] without gaps
    for n in (120, 500, 1000, 37):
        wins = smp.mass_windows(n)
        for (a, b), (c, _) in zip(wins, wins[1:]):
            assert b == c
        assert all(a < b for a, b in wins)


def sample(source, tables=(), obs=(), **cfg):
    plan = pl.compile_model(source, tables=tables, obs=obs)
    return smp.run(plan, **cfg)


def test_standard_normal_moments():
    out = sample(STD_NORMAL, n_chains=2, n_warmup=400, n_samples=2000, seed=3)
    x = out.site("x").ravel()
    n = x.size
    assert np.mean(x) == pytest.approx(0.0, abs=3 * 1.0 / math.sqrt(n / 10))
    assert np.std(x) == pytest.approx(1.0, abs=0.05)
    assert not np.any(out.stats["divergent"])


def test_correlated_pair_recovers_correlation():
    src = """ProgramName: Pair
a ~ N(0, 1)
b ~ N(0.9 * a, 0.4358898943540674)
"""
    # cov(a, b) = 0.9, var(b) = 0.81 + 0.19 = 1, so corr = 0.9
    out = sample(src, n_chains=2, n_warmup=500, n_samples=3000, seed=4)
    a = out.site("a").ravel()
    b = out.site("b").ravel()
    assert np.corrcoef(a, b)[0, 1] == pytest.approx(0.9, abs=0.05)
    assert np.std(b) == pytest.approx(1.0, abs=0.06)


def test_conjugate_normal_posterior():
    # prior N(0, 1), 4 obs of y at sigma=1: posterior N(sum(y)/5, 1/sqrt(5))
    y = np.array([1.2, 0.8, 1.9, 0.5])
    src = "ProgramName: Conj\nIndices: i 0 3\nmu ~ N(0, 1)\ny[i] ~ N(mu, 1)\n"
    table = make_table(("i",), [[i] for i in range(4)], {"y": y})
    out = sample(src, tables=(table,), obs=("y",),
                 n_chains=2, n_warmup=400, n_samples=2000, seed=5)
    mu = out.site("mu").ravel()
    post_mean = y.sum() / 5
    post_sd = 1 / math.sqrt(5)
    mcse = post_sd / math.sqrt(mu.size / 10)
    assert np.mean(mu) == pytest.approx(post_mean, abs=3 * mcse)
    assert np.std(mu) == pytest.approx(post_sd, abs=0.05)


def test_positive_support_stays_positive():
    src = "ProgramName: Scale\ns ~ HalfNormal(2)\n"
    out = sample(src, n_chains=2, n_warmup=300, n_samples=1000, seed=6)
    s = out.site("s")
    assert np.all(s > 0)


def test_acceptance_tracks_target():
    # step-size adaptation responds to the knob; the averaged iterate tends to
    # land a little above the target on easy posteriors
    src = "ProgramName: V\nIndices: i 0 19\nx[i] ~ N(0, 1)\n"
    lo = sample(src, n_chains=2, n_warmup=500, n_samples=500, seed=7,
                target_accept=0.6)
    hi = sample(src, n_chains=2, n_warmup=500, n_samples=500, seed=7,
                target_accept=0.95)
    a_lo = float(np.mean(lo.stats["accept_stat"]))
    a_hi = float(np.mean(hi.stats["accept_stat"]))
    assert a_lo < a_hi
    assert abs(a_lo - 0.6) < 0.15
    assert abs(a_hi - 0.95) < 0.05
    # the post-warmup step size is frozen
    assert np.unique(lo.stats["step_size"][0]).size == 1


def test_depth_zero_is_single_step_metropolis():
    out = sample(STD_NORMAL, n_chains=1, n_warmup=400, n_samples=3000, seed=8,
                 max_tree_depth=0)
    assert int(out.stats["depth"].max()) <= 1
    assert int(out.stats["n_leapfrog"].max()) == 1
    x = out.site("x").ravel()
    assert np.mean(x) == pytest.approx(0.0, abs=0.1)
    assert np.std(x) == pytest.approx(1.0, abs=0.08)


def test_runs_are_deterministic_given_seed():
    a = sample(STD_NORMAL, n_chains=2, n_warmup=200, n_samples=300, seed=9)
    b = sample(STD_NORMAL, n_chains=2, n_warmup=200, n_samples=300, seed=9)
    c = sample(STD_NORMAL, n_chains=2, n_warmup=200, n_samples=300, seed=10)
    assert np.array_equal(a.draws, b.draws)
    assert not np.array_equal(a.draws, c.draws)
    assert np.array_equal(a.stats["energy"], b.stats["energy"])


def test_chains_differ_from_each_other():
    out = sample(STD_NORMAL, n_chains=2, n_warmup=200, n_samples=200, seed=11)
    assert not np.array_equal(out.draws[0], out.draws[1])


def test_drawset_csv_round_trip(tmp_path):
    out = sample(STD_NORMAL, n_chains=2, n_warmup=100, n_samples=50, seed=12)
    path = tmp_path / "draws.csv"
    out.to_csv(str(path))
    back = smp.DrawSet.from_csv(str(path))
    assert back.site_names == out.site_names
    np.testing.assert_array_equal(back.draws, out.draws)  # repr() is lossless


def test_from_csv_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("t,y\n0,1.0\n")
    with pytest.raises(SamplerError, match="chain,draw"):
        smp.DrawSet.from_csv(str(path))


def test_stats_shapes_and_keys():
    out = sample(STD_NORMAL, n_chains=3, n_warmup=100, n_samples=40, seed=13)
    want = {"divergent", "accept_stat", "depth", "energy", "n_leapfrog",
            "step_size"}
    assert want <= set(out.stats)
    for key in want:
        assert out.stats[key].shape == (3, 40)
    assert out.draws.shape == (3, 40, 1)


def test_check_all_divergent():
    smp.check_all_divergent(np.zeros((2, 5), dtype=bool))  # fine
    smp.check_all_divergent(np.array([], dtype=bool))      # vacuous
    with pytest.raises(AllDivergentError):
        smp.check_all_divergent(np.ones((2, 5), dtype=bool))


def test_initialization_failure_is_reported():
    # an observation no latent value can explain: Bernoulli support mismatch
    src = "ProgramName: Bad\np ~ Beta(2, 2)\nx ~ Bernoulli(p)\n"
    table = make_table((), [()], {"x": [0.5]})
    plan = pl.compile_model(src, tables=(table,), obs=("x",))
    with pytest.raises(InitializationFailedError):
        smp.run(plan, n_chains=1, n_warmup=50, n_samples=50, seed=14)


def test_config_validation():
    with pytest.raises(SamplerError):
        smp.SamplerConfig(n_samples=0)
    with pytest.raises(SamplerError):
        smp.SamplerConfig(n_chains=-1)


def test_rng_streams_are_independent():
    s = smp.RngStream(0)
    a = s.chain(0).standard_normal(4)
    b = s.chain(1).standard_normal(4)
    a2 = smp.RngStream(0).chain(0).standard_normal(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, a2)
