import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quenchphase import epsilon, weighted_axial_polarization
from quenchphase.dynamics import (BathChannel, CycleParams, SpinModel, bath_polarization,
                                  measurement_cycle, novel_segments, product_bath_state,
                                  pse_trace, steady_state_cycle)
from quenchphase.dynamics.schedule import PulseSchedule
from quenchphase.fitting import (FitError, fit_epsilon, fit_tau_sweep, fit_twait,
                                 gaussian_deviation, twait_model)
from quenchphase.gaussian import gaussian_trace, phi_q_cpmg, qps_signal
from quenchphase.trace import CoherenceTrace

W = 2 * math.pi * 0.335
T_L = 2 * math.pi / W
TAU = np.linspace(0.1, 6.0, 50)
TW = np.linspace(0, 2 * T_L, 33)[:-1]


def twait_trace(nv_a, pz, pp, phi, tw=TW, noise=None):
    y = twait_model(tw, pz, pp, phi, epsilon(nv_a, nv_a.field), nv_a.a_perp, W)
    if noise is not None:
        y = y + noise
    return CoherenceTrace(tw, np.ones_like(tw), y)


class TestFitEpsilon:
    def test_noiseless_recovery(self):
        res = fit_epsilon(gaussian_trace(TAU, 0.110, 0.0, W), W)
        assert res["eps"] == pytest.approx(0.110, abs=1e-9)
        assert res.residual_norm < 1e-8
        assert res.stderr["eps"] > 0

    @pytest.mark.parametrize("M", [2, 3])
    def test_multipulse_recovery(self, M):
        res = fit_epsilon(gaussian_trace(TAU, 0.3, 0.0, W, M), W, M=M)
        assert res["eps"] == pytest.approx(0.3, abs=1e-9)

    def test_noisy_coverage(self):
        base = gaussian_trace(TAU, 0.110, 0.0, W)
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            tr = CoherenceTrace(TAU, base.x + rng.normal(0, 0.01, TAU.size), base.y)
            hits += fit_epsilon(tr, W).covers("eps", 0.110, 3)
        assert hits >= 95

    def test_exact_nv_a(self, nv_a):
        tau = np.linspace(0.1, 3.0, 40)
        tr = pse_trace(SpinModel(nv_a), np.eye(32) / 32, tau)
        assert 0.09 <= fit_epsilon(tr, W)["eps"] <= 0.13

    def test_too_few_points(self):
        tr = gaussian_trace(np.linspace(0.1, 3, 5), 0.1, 0, W)
        with pytest.raises(FitError, match="8 points"):
            fit_epsilon(tr, W)

    def test_short_span(self):
        tr = gaussian_trace(np.linspace(1.0, 1.5, 10), 0.1, 0, W)
        with pytest.raises(FitError, match="span"):
            fit_epsilon(tr, W)

    def test_revival_sampling(self):
        tau = 4 * math.pi / W * np.arange(1, 11)
        tr = CoherenceTrace(tau, np.ones(10), np.zeros(10))
        with pytest.raises(FitError, match="revival"):
            fit_epsilon(tr, W)

    def test_non_finite(self):
        tr = gaussian_trace(TAU, 0.1, 0, W)
        tr.x[3] = np.nan
        with pytest.raises(FitError):
            fit_epsilon(tr, W)


class TestFitTwait:
    def test_noiseless_recovery(self, nv_a):
        res = fit_twait(twait_trace(nv_a, 1.0, 0.32, 1.0), epsilon(nv_a, nv_a.field),
                        nv_a.a_perp, W)
        assert res["pz_bar"] == pytest.approx(1.0, abs=1e-8)
        assert res["p_perp_tilde"] == pytest.approx(0.32, abs=1e-8)
        assert res["phi"] == pytest.approx(1.0, abs=1e-8)
        assert res.residual_norm < 1e-8
        assert all(v > 0 for v in res.stderr.values())

    @given(pz=st.floats(-1, 1), pp=st.floats(0.05, 1), phi=st.floats(-3.1, 3.1))
    def test_round_trip(self, nv_a, pz, pp, phi):
        res = fit_twait(twait_trace(nv_a, pz, pp, phi), epsilon(nv_a, nv_a.field),
                        nv_a.a_perp, W)
        assert res["pz_bar"] == pytest.approx(pz, abs=1e-7)
        assert res["p_perp_tilde"] == pytest.approx(pp, abs=1e-7)
        assert math.cos(res["phi"] - phi) == pytest.approx(1.0, abs=1e-10)

    def test_no_transverse(self, nv_a):
        res = fit_twait(twait_trace(nv_a, 0.7, 0.0, 0.0), epsilon(nv_a, nv_a.field),
                        nv_a.a_perp, W)
        assert res["pz_bar"] == pytest.approx(0.7, abs=1e-8)
        assert res["p_perp_tilde"] < 0.01
        assert math.isinf(res.stderr["phi"])
        assert any("phi unresolved" in f for f in res.flags)

    def test_larmor_shift_invariance(self, nv_a):
        rng = np.random.default_rng(4)
        noise = rng.normal(0, 0.005, TW.size)
        eps = epsilon(nv_a, nv_a.field)
        a = fit_twait(twait_trace(nv_a, 0.6, 0.3, 0.2, noise=noise), eps, nv_a.a_perp, W)
        b = fit_twait(twait_trace(nv_a, 0.6, 0.3, 0.2, TW + T_L, noise=noise), eps, nv_a.a_perp, W)
        assert b["pz_bar"] == pytest.approx(a["pz_bar"], abs=1e-9)
        assert b["p_perp_tilde"] == pytest.approx(a["p_perp_tilde"], abs=1e-9)

    def test_ci_coverage(self, nv_a):
        eps = epsilon(nv_a, nv_a.field)
        clean = twait_trace(nv_a, 0.7, 0.3, 1.0)
        hits = np.zeros(2)
        n = 200
        for seed in range(n):
            rng = np.random.default_rng(seed)
            tr = CoherenceTrace(TW, clean.x, clean.y + rng.normal(0, 0.01, TW.size))
            res = fit_twait(tr, eps, nv_a.a_perp, W)
            hits += [res.covers("pz_bar", 0.7), res.covers("p_perp_tilde", 0.3)]
        assert np.all((0.60 * n <= hits) & (hits <= 0.75 * n)), hits

    def test_flags(self, nv_a):
        eps = epsilon(nv_a, nv_a.field)
        tr = twait_trace(nv_a, 1.0, 0.0, 0.0)
        tr = CoherenceTrace(TW, tr.x, tr.y * 1.3)
        assert "pz_bar outside [-1, 1]" in fit_twait(tr, eps, nv_a.a_perp, W).flags

    def test_input_errors(self, nv_a):
        eps = epsilon(nv_a, nv_a.field)
        with pytest.raises(FitError, match="eps"):
            fit_twait(twait_trace(nv_a, 0.5, 0.1, 0), 0.0, nv_a.a_perp, W)
        with pytest.raises(FitError, match="12 points"):
            fit_twait(twait_trace(nv_a, 0.5, 0.1, 0, TW[:8]), eps, nv_a.a_perp, W)
        with pytest.raises(FitError, match="Larmor period"):
            fit_twait(twait_trace(nv_a, 0.5, 0.1, 0, np.linspace(0, 1, 20)), eps, nv_a.a_perp, W)
        with pytest.raises(FitError, match="sigma"):
            fit_twait(twait_trace(nv_a, 0.5, 0.1, 0), eps, nv_a.a_perp, W, sigma=0.0)

    def test_steady_state_closed_loop(self, nv_a):
        # steady state of the full NOVEL + PSE + CSE cycle, read out against t_wait
        model = SpinModel(nv_a)
        tau = math.pi / W
        tw = np.linspace(0, 2 * T_L, 25)[:-1]
        novel = BathChannel(model, PulseSchedule(novel_segments(model, 4.0, N=3)))
        ys, direct = [], []
        for t in tw:
            ss = steady_state_cycle(model, measurement_cycle(model, CycleParams(tau, t, 41.25)))
            ys.append(ss.y)
            pz = bath_polarization(novel.apply(ss.bath)[0]).pz
            direct.append(weighted_axial_polarization(nv_a.with_polarization(p_z=list(pz))))
        tr = CoherenceTrace(tw, np.ones_like(tw), np.array(ys))
        res = fit_twait(tr, epsilon(nv_a, nv_a.field), nv_a.a_perp, W, sigma=0.029)
        assert res.covers("pz_bar", float(np.mean(direct)))


class TestFitTauSweep:
    @pytest.mark.parametrize("M", [1, 3])
    def test_round_trip(self, M):
        tau = np.linspace(0.1, 4.0, 60)
        res = fit_tau_sweep(gaussian_trace(tau, 0.110, 0.8, W, M), M, W)
        assert res["eps"] == pytest.approx(0.110, abs=1e-8)
        assert res["pz_bar"] == pytest.approx(0.8, abs=1e-8)
        assert res.residual_norm < 1e-8
        assert not res.flags

    def test_m_mismatch(self):
        tau = np.linspace(0.1, 4.0, 60)
        res = fit_tau_sweep(gaussian_trace(tau, 0.110, 1.0, W, 1), 3, W)
        assert any(f.startswith("M mismatch: M=1") for f in res.flags)

    def test_m3_gain_over_m1(self):
        tau = np.linspace(1e-3, 4 * math.pi / W, 20001)
        eps = 0.093
        phase = (np.abs(phi_q_cpmg(tau, 3, eps, 1.0, W)).max()
                 / np.abs(phi_q_cpmg(tau, 1, eps, 1.0, W)).max())
        signal = qps_signal(tau, 3, eps, 1.0, W).max() / qps_signal(tau, 1, eps, 1.0, W).max()
        assert 1.5 <= phase <= 2.5
        assert 1.5 <= signal <= 2.5

    def test_nv_b_closed_loop(self, nv_b):
        tau = np.linspace(0.1, 2.0, 40)
        bath = nv_b.with_polarization(p_z=0.6)
        tr = pse_trace(SpinModel(bath), product_bath_state(bath.bloch_vectors), tau)
        res = fit_tau_sweep(tr, 1, W, sigma=0.029)
        assert res.covers("pz_bar", 0.6, 2)
        assert res.covers("eps", epsilon(nv_b, nv_b.field), 2)

    def test_json(self):
        tau = np.linspace(0.1, 4.0, 30)
        res = fit_tau_sweep(gaussian_trace(tau, 0.2, 0.5, W), 1, W)
        d = json.loads(res.to_json())
        assert d["params"]["eps"] == pytest.approx(0.2)
        assert d["covariance"]["names"] == ["eps", "pz_bar"]


class TestDeviation:
    def test_identical(self):
        tr = gaussian_trace(TAU, 0.2, 0.7, W)
        prof = gaussian_deviation(tr, tr)
        assert np.all(prof.d_mag == 0) and np.all(prof.d_phi == 0) and np.all(prof.d_y_rel == 0)
        assert prof.crossing is None

    def test_grid_mismatch(self):
        with pytest.raises(ValueError, match="same grid"):
            gaussian_deviation(gaussian_trace(TAU, 0.2, 0.7, W),
                               gaussian_trace(TAU + 0.01, 0.2, 0.7, W))

    def test_unknown_mode(self):
        tr = gaussian_trace(TAU, 0.2, 0.7, W)
        with pytest.raises(ValueError):
            gaussian_deviation(tr, tr, mode="log")

    def test_nv_b_departs_before_nv_a(self, nv_a, nv_b):
        tau = np.linspace(0.1, 6.0, 119)
        crossings = []
        for bath in (nv_a, nv_b):
            pol = bath.with_polarization(p_z=1.0)
            ex = pse_trace(SpinModel(pol), product_bath_state(pol.bloch_vectors), tau)
            ga = gaussian_trace(tau, epsilon(bath, bath.field), 1.0, W)
            c = gaussian_deviation(ex, ga, 0.05, "absolute").crossing
            crossings.append(math.inf if c is None else c)
        assert crossings[1] < crossings[0]
