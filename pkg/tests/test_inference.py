import itertools
import math

import numpy as np
import pytest

from conftest import bebu_brute, random_trial
from winstats.estimators import METHODS, WorkingModels, assemble, estimate, fit_working_models
from winstats.inference import (
    InferenceError,
    VarianceComponents,
    bebu_counts,
    delta_wr_wd,
    infer,
    pvr,
    variance_bebu,
    variance_if,
    z_quantile,
)
from winstats.sim_engine import DgpSpec, ExperimentConfig, draw_dataset, run_experiment
from winstats.trial_data import TrialDataset


def _ds(y, z, L=None):
    y = np.asarray(y)
    return TrialDataset(y=y, z=np.asarray(z), x=np.zeros((len(y), 0)), n_levels=L or int(y.max()))


def _vc(v1, vm, cv):
    return VarianceComponents("UNADJ", "influence_function", v1, vm, cv)


def test_intercept_only_ipw_variance_equals_unadjusted(rng):
    ds = random_trial(rng, 300, 4, p=2)
    models = fit_working_models(ds, ["IPW", "OW"], ps_columns=[])
    u = variance_if(ds, estimate(ds, "UNADJ", models))
    for m in ("IPW", "OW"):
        v = variance_if(ds, estimate(ds, m, models), models.propensity)
        assert abs(v.var_tau1 - u.var_tau1) < 1e-8
        assert abs(v.var_tau_neg1 - u.var_tau_neg1) < 1e-8
        assert abs(v.cov - u.cov) < 1e-8


def test_bebu_small_example_against_literal_loops():
    ds = _ds([3, 1, 2, 1, 3], [1, 1, 0, 0, 0])
    vc = variance_bebu(ds)
    t = ds.y[ds.z == 1]
    c = ds.y[ds.z == 0]
    n1, n0 = len(t), len(c)
    t1 = sum(a > b for a in t for b in c) / (n1 * n0)
    tm = sum(a < b for a in t for b in c) / (n1 * n0)
    ww = wl = 0
    for a in t:
        for j, k in itertools.permutations(range(n0), 2):
            ww += (a > c[j]) * (a > c[k])
            wl += (a > c[j]) * (a < c[k])
    xi10 = ww / (n1 * n0 * (n0 - 1)) - t1**2
    xi10_12 = wl / (n1 * n0 * (n0 - 1)) - t1 * tm
    ww = 0
    for b in c:
        for i, k in itertools.permutations(range(n1), 2):
            ww += (t[i] > b) * (t[k] > b)
    xi01 = ww / (n0 * n1 * (n1 - 1)) - t1**2
    assert vc.xi["xi10"] == pytest.approx(xi10, abs=1e-15)
    assert vc.xi["xi01"] == pytest.approx(xi01, abs=1e-15)
    assert vc.xi["xi10_12"] == pytest.approx(xi10_12, abs=1e-15)
    assert vc.var_tau1 == pytest.approx(xi10 / n1 + xi01 / n0, abs=1e-15)
    ref = bebu_brute(ds)
    for k, v in ref.items():
        assert vc.xi[k] == pytest.approx(v, abs=1e-15), k


def test_bebu_counts_and_oracle(rng):
    for L in (2, 3, 5, 7):
        ds = random_trial(rng, int(rng.integers(10, 120)), L, all_levels=False)
        c, g, d, f = bebu_counts(ds)
        yt, yc = ds.y[ds.z == 1], ds.y[ds.z == 0]
        np.testing.assert_array_equal(c, (yt[:, None] > yc[None, :]).sum(1))
        np.testing.assert_array_equal(g, (yt[:, None] < yc[None, :]).sum(1))
        np.testing.assert_array_equal(d, (yt[:, None] > yc[None, :]).sum(0))
        np.testing.assert_array_equal(f, (yt[:, None] < yc[None, :]).sum(0))
        xi = variance_bebu(ds).xi
        for k, v in bebu_brute(ds).items():
            assert xi[k] == pytest.approx(v, rel=1e-10, abs=1e-15), k


def test_bebu_all_ties_and_errors(rng):
    vc = variance_bebu(_ds([2] * 6, [1, 0] * 3, L=3))
    assert vc.var_tau1 == vc.var_tau_neg1 == vc.cov == 0
    assert all(v == 0 for v in vc.xi.values())
    with pytest.raises(InferenceError, match="at least 2"):
        variance_bebu(_ds([1, 2, 3, 1], [1, 0, 0, 0]))
    ds = random_trial(rng, 60, 3)
    models = fit_working_models(ds, ["IPW"])
    with pytest.raises(ValueError, match="unadjusted"):
        variance_bebu(ds, estimate(ds, "IPW", models))


def test_routes_agree_on_simulated_data():
    ds = draw_dataset(DgpSpec("quadratic", n=600), np.random.default_rng(8))
    est = estimate(ds, "UNADJ", WorkingModels())
    a = delta_wr_wd(variance_if(ds, est), est)
    b = delta_wr_wd(variance_bebu(ds, est), est)
    assert abs(a.se_wr / b.se_wr - 1) < 0.15
    assert abs(a.se_wd / b.se_wd - 1) < 0.15


def test_delta_reference_interval():
    t1, tm = 0.5495, 0.5  # WR = 1.099
    wr = t1 / tm
    # equal variances, no covariance, scaled so the delta-method SE of WR is 0.143
    v = 0.143**2 / (wr**2 * (1 / t1**2 + 1 / tm**2))
    done = delta_wr_wd(_vc(v, v, 0.0), assemble("UNADJ", t1, tm))
    assert done.se_wr == pytest.approx(0.143, rel=1e-12)
    lo, hi = done.ci_wr
    assert lo == pytest.approx(0.818, abs=0.002) and hi == pytest.approx(1.379, abs=0.002)


def test_delta_equal_taus_zero_cov():
    est = assemble("UNADJ", 0.3, 0.3)
    v = 0.0017
    done = delta_wr_wd(_vc(v, v, 0.0), est)
    assert done.var_wr == pytest.approx(2 * v / 0.3**2, rel=1e-14)
    assert done.var_wd == pytest.approx(2 * v, rel=1e-14)
    lo, hi = done.ci_wr
    assert (lo + hi) / 2 == pytest.approx(1.0)
    assert hi - lo == pytest.approx(2 * z_quantile(0.95) * done.se_wr)


def test_delta_errors_and_undefined_ratio(toy):
    est = assemble("UNADJ", 0.4, 0.3)
    with pytest.raises(InferenceError, match="negative WD"):
        delta_wr_wd(_vc(0.001, 0.001, 0.002), est)
    with pytest.raises(InferenceError, match="negative WR"):
        # var_wd fine (>= 0) but the ratio's linearisation goes negative
        delta_wr_wd(_vc(0.001, 0.0001, 0.00045), est)
    e = estimate(toy, "UNADJ", WorkingModels())
    done, _ = infer(toy, "UNADJ", WorkingModels())
    assert done.var_wr is None and done.ci_wr is None and done.var_wd >= 0
    assert not e.wr_defined


def test_log_scale_interval(rng):
    ds = random_trial(rng, 200, 4)
    nat, _ = infer(ds, "UNADJ", WorkingModels())
    log, _ = infer(ds, "UNADJ", WorkingModels(), log_wr=True)
    assert log.ci_wr[0] * log.ci_wr[1] == pytest.approx(nat.wr**2)
    assert log.ci_wr[0] > 0 and log.ci_wd == nat.ci_wd


def test_pvr_examples():
    assert pvr(0.142, 0.115) == pytest.approx(34.4, abs=0.05)
    assert pvr(0.2, 0.2) == 0.0
    assert pvr(0.1, 0.12) < 0
    with pytest.raises(ValueError):
        pvr(0.0, 0.1)


def test_z_quantile():
    assert z_quantile(0.95) == pytest.approx(1.959963984540054, abs=1e-12)
    with pytest.raises(ValueError):
        z_quantile(1.0)


@pytest.mark.parametrize("method", METHODS)
def test_influence_function_properties(rng, method):
    ds = random_trial(rng, 250, 5, p=2)
    models = fit_working_models(ds, METHODS)
    est, vc = infer(ds, method, models)
    for phi in (vc.phi1, vc.phi_neg1):
        assert abs(phi.mean()) < 1e-6 * phi.std()
    assert vc.var_tau1 >= 0 and vc.var_tau_neg1 >= 0
    assert abs(vc.cov) <= math.sqrt(vc.var_tau1 * vc.var_tau_neg1) * (1 + 1e-8)
    # WD variance equals the second moment of the differenced influence function
    d = vc.phi1 - vc.phi_neg1
    assert est.var_wd == pytest.approx(float(d @ d) / ds.n**2, rel=1e-12, abs=1e-15)


def test_missing_models_are_errors(rng):
    ds = random_trial(rng, 80, 3)
    models = fit_working_models(ds, METHODS)
    with pytest.raises(ValueError, match="propensity"):
        variance_if(ds, estimate(ds, "IPW", models))
    with pytest.raises(ValueError, match="outcome"):
        variance_if(ds, estimate(ds, "AOW", models), models.propensity)


def test_augmented_variance_tracks_monte_carlo():
    spec = DgpSpec("quadratic", n=500)
    wd, var = [], []
    for r in range(300):
        ds = draw_dataset(spec, np.random.default_rng([77, r]))
        models = fit_working_models(ds, ["AOW"], feature_map="quadratic")
        est, _ = infer(ds, "AOW", models)
        wd.append(est.wd)
        var.append(est.var_wd)
    ratio = np.mean(var) / np.var(wd, ddof=1)
    # 300 replicates: MC variance has ~8% relative error
    assert 0.75 < ratio < 1.3, ratio


@pytest.mark.parametrize("model", ["quadratic", "interaction"])
def test_asymptotic_dominance(model):
    cfg = ExperimentConfig(models=(model,), ns=(2000,), reps=2000, seed=5,
                           methods=("UNADJ", "IPW", "OW"), variances=False,
                           truth_draws=200_000)
    rep = run_experiment(cfg)
    u = rep.get(model, 0.5, 2000, "UNADJ", "WD")["mc_var"]
    for m in ("IPW", "OW"):
        assert rep.get(model, 0.5, 2000, m, "WD")["mc_var"] <= u, m


@pytest.mark.parametrize("model", ["quadratic", "interaction"])
def test_coverage_calibration(model):
    cfg = ExperimentConfig(models=(model,), ns=(400,), reps=1000, seed=11,
                           methods=("UNADJ", "IPW", "OW"), truth_draws=1_000_000)
    rep = run_experiment(cfg)
    for m in ("UNADJ", "IPW", "OW"):
        for e in ("WR", "WD"):
            cov = rep.get(model, 0.5, 400, m, e)["coverage"]
            assert 0.93 <= cov <= 0.97, (m, e, cov)
