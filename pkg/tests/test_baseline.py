import numpy as np
import pytest

from trackforge.baseline import (DIM, EkfState, ImmConfig, ImmState, JpdaConfig, JpdaImmTracker, ProcessNoise,
                                 ekf_predict, ekf_step, ekf_update, imm_step, init_from_positions,
                                 jpda_probabilities, measurement_model, transition)
from trackforge.errors import CombinatorialLimit, SingularInnovation
from trackforge.scenarios import build_scenario
from trackforge.sim import NoiseParams, measure_array, spherical_to_cartesian

from oracles import brute_jpda, random_jpda, straight_scenario


def random_state(rng):
    x = np.zeros(DIM)
    r = rng.uniform(2e4, 1e5)
    az, el = rng.uniform(-3, 3), rng.uniform(0.02, 0.3)
    x[:3] = r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    x[3:6] = rng.normal(size=3) * 300
    x[6:9] = rng.normal(size=3) * 10
    x[9] = rng.normal() * 0.05
    return x


def prior_cov():
    return np.diag([1e4] * 3 + [1e4] * 3 + [100.0] * 3 + [1e-3])


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = random_state(rng)
        _, H = measurement_model(x)
        N = np.zeros_like(H)
        for i in range(6):
            h = 1e-4 * max(1.0, abs(x[i]))
            up, dn = x.copy(), x.copy()
            up[i] += h
            dn[i] -= h
            d = measurement_model(up)[0] - measurement_model(dn)[0]
            N[:, i] = d / (2 * h)
        # compare each row relative to its largest entry; tiny entries make elementwise ratios meaningless
        rel = np.abs(N[:, :6] - H[:, :6]).max(axis=1) / np.abs(H[:, :6]).max(axis=1)
        assert rel.max() < 1e-6
        assert not H[:, 6:].any()


def test_jacobian_matches_sim_measurement():
    x = random_state(np.random.default_rng(1))
    h, _ = measurement_model(x)
    np.testing.assert_allclose(h, measure_array(x[:3], x[3:6]), rtol=1e-12)


def test_singular_geometry():
    with pytest.raises(SingularInnovation):
        measurement_model(np.zeros(DIM))


def test_transition_models():
    rng = np.random.default_rng(2)
    x = random_state(rng)
    for model in ("cv", "ct", "ca"):
        y, F = transition(model, x, 5.0)
        # Jacobian against finite differences
        N = np.zeros((DIM, DIM))
        for i in range(DIM):
            e = np.zeros(DIM)
            e[i] = 1e-6 * max(1.0, abs(x[i]))
            N[:, i] = (transition(model, x + e, 5.0)[0] - transition(model, x - e, 5.0)[0]) / (2 * e[i])
        np.testing.assert_allclose(N, F, atol=1e-4 * np.abs(F).max())
    y, _ = transition("cv", x, 5.0)
    np.testing.assert_allclose(y[:3], x[:3] + 5 * x[3:6])
    x[9] = 0.0
    np.testing.assert_allclose(transition("ct", x, 5.0)[0], transition("cv", x, 5.0)[0], atol=1e-9)
    with pytest.raises(ValueError):
        transition("singer", x, 5.0)


def test_zero_innovation_keeps_mean():
    x = random_state(np.random.default_rng(3))
    st = EkfState(x, np.eye(DIM) * 100.0)
    pred = ekf_predict(st, "cv", 5.0, ProcessNoise(cv=0, ct=0, ca=0, floor=0))
    z, _ = measurement_model(pred.mean)
    post, _ = ekf_update(pred, z, np.diag([1e-6, 1e-12, 1e-12, 1e-6]))
    np.testing.assert_allclose(post.mean, pred.mean, rtol=1e-12)


def _is_spd(P):
    return np.allclose(P, P.T, atol=1e-9 * np.abs(P).max()) and np.linalg.eigvalsh(P).min() > 0


def test_covariance_stays_spd():
    rng = np.random.default_rng(4)
    noise = NoiseParams()
    x = random_state(rng)
    x[6:] = 0
    st = EkfState(x.copy(), prior_cov())
    truth = x.copy()
    for _ in range(1000):
        truth, _ = transition("cv", truth, 1.0)
        z = measure_array(truth[:3], truth[3:6], noise, rng)
        st = ekf_step(st, rng.choice(["cv", "ct", "ca"]), z, noise, 1.0)
        assert _is_spd(st.cov)


def test_imm_identical_models_match_ekf():
    rng = np.random.default_rng(5)
    noise = NoiseParams()
    cfg = ImmConfig(models=("cv", "cv"), transition=[[0.8, 0.2], [0.2, 0.8]], initial_probs=[0.5, 0.5])
    x = random_state(rng)
    x[6:] = 0
    P = prior_cov()
    imm = ImmState([EkfState(x.copy(), P.copy()), EkfState(x.copy(), P.copy())], cfg.initial_probs.copy())
    single = EkfState(x.copy(), P.copy())
    truth = x.copy()
    for _ in range(30):
        truth, _ = transition("cv", truth, 5.0)
        z = measure_array(truth[:3], truth[3:6], noise, rng)
        fused, imm = imm_step(imm, cfg, z, noise, 5.0)
        single = ekf_step(single, "cv", z, noise, 5.0, cfg.noise)
        np.testing.assert_allclose(imm.probs, [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(fused.mean, single.mean, rtol=0, atol=1e-9 * np.abs(single.mean).max())


def test_imm_single_model_is_ekf():
    rng = np.random.default_rng(6)
    noise = NoiseParams()
    cfg = ImmConfig(models=("ca",), transition=[[1.0]], initial_probs=[1.0])
    x = random_state(rng)
    st = EkfState(x.copy(), prior_cov())
    imm = ImmState([EkfState(x.copy(), prior_cov())], np.array([1.0]))
    for _ in range(10):
        z = measure_array(x[:3], x[3:6], noise, rng)
        fused, imm = imm_step(imm, cfg, z, noise, 5.0)
        st = ekf_step(st, "ca", z, noise, 5.0, cfg.noise)
        np.testing.assert_array_equal(fused.mean, st.mean)


def test_cv_mode_dominates_on_straight_flight():
    noise = NoiseParams()
    cfg = ImmConfig()
    wins = 0
    for run in range(100):
        rng = np.random.default_rng([7, run])
        x = random_state(rng)
        x[6:] = 0
        pos = x[:3] + np.arange(21)[:, None] * 5.0 * x[3:6]
        meas = measure_array(pos, np.tile(x[3:6], (21, 1)), noise, rng)
        conv = spherical_to_cartesian(meas)[:, :3]
        init = init_from_positions(conv[:2], meas[1], noise, 5.0)
        imm = ImmState([EkfState(init.mean.copy(), init.cov.copy()) for _ in cfg.models], cfg.initial_probs.copy())
        best = False
        for k in range(2, 21):
            _, imm = imm_step(imm, cfg, meas[k], noise, 5.0)
            best = best or bool(imm.probs[0] > imm.probs[1:].max())
        wins += best
    assert wins >= 90


def test_mode_probabilities_are_simplex():
    rng = np.random.default_rng(8)
    noise = NoiseParams()
    cfg = ImmConfig()
    x = random_state(rng)
    imm = ImmState([EkfState(x.copy(), prior_cov()) for _ in range(3)], cfg.initial_probs.copy())
    for _ in range(50):
        x, _ = transition("ct", x, 5.0)
        _, imm = imm_step(imm, cfg, measure_array(x[:3], x[3:6], noise, rng), noise, 5.0)
        assert np.all(imm.probs >= 0) and abs(imm.probs.sum() - 1) < 1e-9


def test_imm_config_validation():
    with pytest.raises(ValueError):
        ImmConfig(transition=[[0.5, 0.5, 0.1], [0, 1, 0], [0, 0, 1]])
    with pytest.raises(ValueError):
        ImmConfig(initial_probs=[0.5, 0.5, 0.5])
    with pytest.raises(ValueError):
        JpdaConfig(p_d=0)
    assert JpdaConfig().gate_threshold == pytest.approx(13.2767, abs=1e-4)


# --- JPDA -----------------------------------------------------------------


def test_jpda_matches_brute_force():
    rng = np.random.default_rng(9)
    checked = 0
    for _ in range(200):
        tracks, meas, p_d, lam = random_jpda(rng)
        cfg = JpdaConfig(p_d=p_d)
        beta = jpda_probabilities(tracks, meas, cfg, lam)
        np.testing.assert_allclose(beta, brute_jpda(tracks, meas, p_d, lam, cfg.gate_prob), rtol=0, atol=1e-12)
        np.testing.assert_allclose(beta.sum(axis=1), 1.0, atol=1e-12)
        checked += bool(len(meas)) and beta[:, :-1].any()
    assert checked > 50


def test_jpda_examples():
    S = np.diag([900.0, 1e-4, 1e-4, 25.0])
    z = np.array([5e4, 0.1, 0.5, 10.0])
    beta = jpda_probabilities([(z, S)], [z + [10, 0, 0, 1]], JpdaConfig(p_d=1.0, clutter_density=0.0))
    np.testing.assert_allclose(beta, [[1.0, 0.0]])
    beta = jpda_probabilities([(z, S), (z, S)], np.zeros((0, 4)))
    np.testing.assert_array_equal(beta, [[1.0], [1.0]])


def test_jpda_enumeration_limit():
    S = np.diag([900.0, 1e-4, 1e-4, 25.0])
    z = np.array([5e4, 0.1, 0.5, 10.0])
    tracks = [(z, S)] * 9
    with pytest.raises(CombinatorialLimit):
        jpda_probabilities(tracks, [z], JpdaConfig(clutter_density=1e-9))


# --- full tracker ---------------------------------------------------------


def test_tracker_is_deterministic():
    sc = build_scenario(straight_scenario(3, 30))
    runs = []
    for _ in range(2):
        trk = JpdaImmTracker(noise=sc.config.noise, dt=sc.config.dt_sample)
        runs.append([trk.step(m) for m, _ in sc.frames])
    for a, b in zip(*runs):
        assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
