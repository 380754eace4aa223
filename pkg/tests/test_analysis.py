"""Convergence diagnostics, summaries, imputation extraction, and scoring."""

import math

import numpy as np
import pytest

from ldmlang import analysis as an
from ldmlang import plan as pl
from ldmlang import sampler as smp
from ldmlang.datatable import make_table
from ldmlang.errors import NoImputedSitesError


def test_rhat_near_one_for_iid_chains():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 5000))
    r = an.split_rhat(x)
    assert 0.99 < r < 1.01


def test_rhat_flags_disjoint_chains():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 500))
    x[1] += 10.0
    assert an.split_rhat(x) > 1.2


def test_rhat_flags_within_chain_drift():
    # split halves expose a trend even with a single... two chains
    t = np.linspace(0, 5, 400)
    x = np.stack([t, t + 0.01])
    assert an.split_rhat(x) > 1.2


def test_rhat_undefined_cases():
    assert math.isnan(an.split_rhat(np.zeros((1, 100))))
    assert math.isnan(an.split_rhat(np.zeros((3, 3))))
    assert math.isnan(an.split_rhat(np.full((2, 100), 3.7)))


def test_ess_close_to_n_for_iid_draws():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 5000))
    ess = an.effective_sample_size(x)
    assert ess > 0.8 * x.size


def test_ess_shrinks_under_autocorrelation():
    rng = np.random.default_rng(3)
    rho, m, n = 0.9, 2, 20000
    x = np.empty((m, n))
    for c in range(m):
        e = rng.normal(size=n)
        x[c, 0] = e[0]
        for t in range(1, n):
            x[c, t] = rho * x[c, t - 1] + math.sqrt(1 - rho * rho) * e[t]
    ess = an.effective_sample_size(x)
    want = x.size * (1 - rho) / (1 + rho)  # AR(1) asymptotic ESS
    assert ess == pytest.approx(want, rel=0.2)


def test_ess_undefined_for_constant_or_tiny_input():
    assert math.isnan(an.effective_sample_size(np.full((2, 100), 1.0)))
    assert math.isnan(an.effective_sample_size(np.zeros((2, 3))))


def test_quantile_linear_interpolation():
    x = np.arange(1.0, 101.0)
    assert an.quantile(x, 0.05) == pytest.approx(5.95)
    assert an.quantile(x, 0.5) == pytest.approx(50.5)
    assert an.quantile(x, 0.95) == pytest.approx(95.05)


def make_drawset(draws_by_site, n_warmup=0):
    names = list(draws_by_site)
    arrs = [np.asarray(draws_by_site[k], dtype=float) for k in names]
    draws = np.stack(arrs, axis=-1)
    return smp.DrawSet(draws=draws, site_names=names, stats={},
                       n_warmup=n_warmup, seed=0)


def test_summarize_fields_and_order():
    rng = np.random.default_rng(4)
    ds = make_drawset({
        "b": rng.normal(2.0, 0.5, size=(4, 500)),
        "a": rng.normal(-1.0, 1.0, size=(4, 500)),
    })
    rows = an.summarize(ds)
    assert [r.site for r in rows] == ["b", "a"]  # slot order, not sorted
    row = rows[0]
    assert row.mean == pytest.approx(2.0, abs=0.05)
    assert row.std == pytest.approx(0.5, abs=0.03)
    assert row.q05 < row.median < row.q95
    assert row.n_eff > 1000
    assert row.r_hat == pytest.approx(1.0, abs=0.02)
    d = row.to_dict()
    assert "5.0%" in d and "95.0%" in d and d["site"] == "b"


def test_format_summary_is_a_table():
    ds = make_drawset({"x": np.random.default_rng(5).normal(size=(2, 100))})
    text = an.format_summary(an.summarize(ds))
    lines = text.splitlines()
    assert lines[0].split() == ["mean", "std", "median", "5.0%", "95.0%",
                                "n_eff", "r_hat"]
    assert lines[1].split()[0] == "x"
    assert len(lines) == 2


def test_imputation_bridge_recovers_the_gap():
    # random walk with tight steps: the missing middle cell's posterior mean
    # sits halfway between its observed neighbours
    T = 11
    src = """ProgramName: Bridge
Indices: t 0 10
y[0] ~ N(0, 10)
y[t] ~ N(y[t-1], 0.1)
"""
    rng = np.random.default_rng(6)
    y = np.cumsum(rng.normal(0, 0.1, size=T))
    y_miss = y.copy()
    y_miss[5] = np.nan
    table = make_table(("t",), [[t] for t in range(T)], {"y": y_miss})
    plan = pl.compile_model(src, tables=(table,), obs=("y",))
    assert plan.latent_dim == 1
    out = smp.run(plan, n_chains=2, n_warmup=400, n_samples=1500, seed=7)
    imp = an.extract_imputations(plan, out)
    assert list(imp) == ["y[5]"]
    series = imp["y[5]"]
    assert series.shape == (2 * 1500,)
    bridge_mean = (y[4] + y[6]) / 2
    bridge_sd = 0.1 / math.sqrt(2)
    assert np.mean(series) == pytest.approx(bridge_mean, abs=3 * bridge_sd)
    assert np.std(series) == pytest.approx(bridge_sd, rel=0.25)


def test_extract_imputations_requires_missing_cells():
    plan = pl.compile_model("ProgramName: M\nx ~ N(0, 1)\n")
    ds = make_drawset({"x": np.zeros((2, 10))})
    with pytest.raises(NoImputedSitesError):
        an.extract_imputations(plan, ds)


def test_score_formulas():
    src = "ProgramName: M\nIndices: i 0 9\nmu ~ N(0, 5)\ny[i] ~ N(mu, 1)\n"
    rng = np.random.default_rng(8)
    y = rng.normal(1.0, 1.0, size=10)
    table = make_table(("i",), [[i] for i in range(10)], {"y": y})
    plan = pl.compile_model(src, tables=(table,), obs=("y",))
    out = smp.run(plan, n_chains=2, n_warmup=300, n_samples=500, seed=9)
    sc = an.score(plan, out, runtime_seconds=1.5)
    assert sc.k == 1
    assert sc.n == 10
    # plug-in NLL at the posterior mean of mu
    mu_bar = float(np.mean(out.site("mu")))
    want_nll = 0.5 * np.sum((y - mu_bar) ** 2) + 10 * 0.5 * math.log(2 * math.pi)
    assert sc.nll == pytest.approx(want_nll, abs=1e-9)
    assert sc.aic == pytest.approx(2 * sc.k + 2 * sc.nll)
    assert sc.bic == pytest.approx(sc.k * math.log(sc.n) + 2 * sc.nll)
    assert sc.runtime_seconds == 1.5
    # deterministic in the drawset
    again = an.score(plan, out, runtime_seconds=1.5)
    assert again.nll == sc.nll
    d = sc.to_dict()
    assert set(d) >= {"nll", "aic", "bic", "k", "n"}


def test_bic_oracle():
    s = an.ModelScore(nll=10.0, aic=2 * 2 + 20.0,
                      bic=2 * math.log(100) + 20.0, k=2, n=100,
                      runtime_seconds=0.0)
    assert s.bic == pytest.approx(29.210340371976184, abs=1e-12)
