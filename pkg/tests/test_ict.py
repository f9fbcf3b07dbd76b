from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ictmbo import proxy as px
from ictmbo.baselines import run_ensemble
from ictmbo.ict import (
    EnsembleState, IctConfig, PseudoBatch, SelectedBatch, ascend, default_config, default_gamma,
    ensemble_ascend_step, fit_ensemble, ict_iteration, ict_subround, meta_update_weights,
    reweight_and_finetune, run_ict, sample_pseudo_points, select_small_loss, weighted_finetune_step,
)
from ictmbo.tasks import OfflineDataset, oracle_audit

from fd import central_diff, random_proxy, rel_err


def unit_chain(w3=1.0):
    # 1x1x1x1 network: W1 = W2 = 1, zero biases
    return px.ProxyParams(np.array([1.0, 0.0, 1.0, 0.0, w3, 0.0]), 1, 1)


def sel_of(xs, ys):
    return SelectedBatch(np.arange(len(ys)), np.asarray(xs, float), np.asarray(ys, float))


# ---------------------------------------------------------------------------
# config


def test_config_validation():
    for bad in (dict(T=-1), dict(K=0), dict(K=9, M=8), dict(alpha=-1), dict(gamma=-0.1),
                dict(sampling_mode="x"), dict(n_starts=0), dict(proxy_seeds=(1, 2))):
        with pytest.raises(ValueError):
            IctConfig(**bad)


def test_role_seeds_distinct_and_overridable():
    assert len(set(IctConfig(seed=5).seeds())) == 3
    assert IctConfig(proxy_seeds=[4, 4, 4]).seeds() == (4, 4, 4)


def test_default_config_by_kind(bowl, seq):
    assert default_config(bowl).T == 200 and default_config(seq).T == 100
    assert default_config(seq).beta == 0.3
    assert default_config(bowl, K=8).K == 8


# ---------------------------------------------------------------------------
# sampling and selection


def test_pseudo_points_around_current(rng):
    x = np.arange(3.0)
    P = sample_pseudo_points(x, 0.0, 5, rng)
    np.testing.assert_array_equal(P, np.tile(x, (5, 1)))
    P = sample_pseudo_points(x, 0.5, 4000, rng)
    np.testing.assert_allclose(P.mean(0), x, atol=0.05)
    np.testing.assert_allclose(P.std(0), 0.5, atol=0.05)


def test_pseudo_points_around_dataset(rng):
    D = np.array([[0.0, 0.0], [10.0, 10.0]])
    P = sample_pseudo_points(D, 0.0, 50, rng, "around-offline-dataset")
    assert {tuple(r) for r in P} == {(0.0, 0.0), (10.0, 10.0)}


def test_pseudo_points_errors(rng):
    with pytest.raises(ValueError):
        sample_pseudo_points(np.zeros(2), 0.1, 0, rng)
    with pytest.raises(ValueError):
        sample_pseudo_points(np.zeros(2), 0.1, 3, rng, "elsewhere")


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), M=st.integers(1, 64), data=st.data())
def test_selection_matches_brute_force(seed, M, data):
    K = data.draw(st.integers(1, M))
    rng = np.random.default_rng(seed)
    p = random_proxy(rng, 3, 4)
    X = rng.normal(size=(M, 3))
    labels = np.round(rng.normal(size=M), 1)
    f = px.forward(p, X)
    loss = [(f[i] - labels[i]) ** 2 for i in range(M)]
    expected = sorted(sorted(range(M), key=lambda i: (loss[i], i))[:K])
    sel = select_small_loss(p, PseudoBatch(X, labels, 0), K)
    assert list(sel.indices) == expected
    np.testing.assert_array_equal(sel.xs, X[expected])
    np.testing.assert_array_equal(sel.ys, labels[expected])


def test_selection_ties_prefer_lower_index():
    p = unit_chain(w3=0.0)  # predicts 0 everywhere
    batch = PseudoBatch(np.zeros((5, 1)), np.array([1.0, -1.0, 0.5, 1.0, -0.5]), 0)
    # losses 1, 1, .25, 1, .25: both .25s, then the first of the three 1s
    assert list(select_small_loss(p, batch, 3).indices) == [0, 2, 4]


def test_selection_k_bounds():
    batch = PseudoBatch(np.zeros((3, 1)), np.zeros(3), 0)
    with pytest.raises(ValueError):
        select_small_loss(unit_chain(), batch, 4)


# ---------------------------------------------------------------------------
# fine-tune and meta update


def test_scalar_finetune_example():
    # f(2) = 2, residual 2, d loss / d w3 = 2 * 2 * relu-output 2 = 8; 1 - 0.1 * 8 = 0.2
    new = weighted_finetune_step(unit_chain(), sel_of([[2.0]], [0.0]), [1.0], 0.1)
    assert new.layer_weights[2][0, 0] == pytest.approx(0.2, abs=1e-15)


def test_finetune_zero_weights_or_rate_is_identity(rng):
    p = random_proxy(rng, 2, 3)
    s = sel_of(rng.normal(size=(4, 2)), rng.normal(size=4))
    assert weighted_finetune_step(p, s, np.zeros(4), 0.5) == p
    assert weighted_finetune_step(p, s, np.ones(4), 0.0) == p


def test_finetune_rejects_bad_weights(rng):
    s = sel_of(np.zeros((2, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        weighted_finetune_step(unit_chain(), s, [1.0], 0.1)
    with pytest.raises(ValueError):
        weighted_finetune_step(unit_chain(), s, [1.0, -1.0], 0.1)


def meta_fd(p, Xs, ys, w, Xo, yo, alpha, beta):
    def outer(om):
        _, g = px.weighted_mse_grad(p, Xs, ys, om)
        return px.mse(p.with_theta(p.theta - alpha * g.theta), Xo, yo)
    return w - beta * central_diff(outer, w)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), K=st.integers(2, 6))
def test_meta_update_matches_finite_differences(seed, K):
    rng = np.random.default_rng(seed)
    d, h = int(rng.integers(1, 6)), int(rng.integers(2, 10))
    p = random_proxy(rng, d, h)
    Xs, ys = rng.normal(size=(K, d)), rng.normal(size=K)
    Xo, yo = rng.normal(size=(8, d)), rng.normal(size=8)
    w = rng.uniform(0.5, 1.5, K)
    got = meta_update_weights(p, sel_of(Xs, ys), w, Xo, yo, 0.05, 0.5)
    want = meta_fd(p, Xs, ys, w, Xo, yo, 0.05, 0.5)
    if np.all(want > 0):
        assert rel_err(got - w, want - w) <= 1e-4


def test_meta_update_clamps_at_zero(rng):
    p = random_proxy(rng, 2, 4)
    Xs, ys = rng.normal(size=(4, 2)), 10 * rng.normal(size=4)
    Xo, yo = rng.normal(size=(6, 2)), rng.normal(size=6)
    w = meta_update_weights(p, sel_of(Xs, ys), np.full(4, 1e-6), Xo, yo, 1.0, 100.0)
    assert np.all(w >= 0) and np.any(w == 0)


def test_meta_update_beta_zero_keeps_weights(rng):
    p = random_proxy(rng, 2, 4)
    w = rng.uniform(0, 1, 3)
    got = meta_update_weights(p, sel_of(rng.normal(size=(3, 2)), rng.normal(size=3)), w,
                              rng.normal(size=(5, 2)), rng.normal(size=5), 0.1, 0.0)
    np.testing.assert_array_equal(got, w)


def test_meta_update_empty_offline_batch(rng):
    with pytest.raises(ValueError):
        meta_update_weights(unit_chain(), sel_of([[1.0]], [0.0]), [1.0], np.zeros((0, 1)), np.zeros(0), 0.1, 0.1)


def test_fused_matches_composed(rng):
    p = random_proxy(rng, 3, 6)
    s = sel_of(rng.normal(size=(5, 3)), rng.normal(size=5))
    Xo, yo = rng.normal(size=(9, 3)), rng.normal(size=9)
    w1 = meta_update_weights(p, s, np.ones(5), Xo, yo, 0.05, 0.5)
    w2, p2 = reweight_and_finetune(p, s, np.ones(5), Xo, yo, 0.05, 0.5)
    np.testing.assert_allclose(w2, w1, rtol=1e-12)
    np.testing.assert_allclose(p2.theta, weighted_finetune_step(p, s, w1, 0.05).theta, rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------------------
# subrounds


@pytest.fixture
def small_world(rng, bowl_data):
    train, _, _ = bowl_data.standardized()
    state = EnsembleState(tuple(random_proxy(rng, 8, 6) for _ in range(3)), (11, 22, 33))
    cfg = IctConfig(M=12, K=5, meta_batch=40)
    return state, train, cfg, train.designs[0]


@pytest.mark.parametrize("lab", [0, 1, 2])
def test_labeler_is_untouched_and_others_move(small_world, lab):
    state, train, cfg, x = small_world
    new = ict_subround(state, lab, x, train, cfg, (7,))
    for i in range(3):
        assert (new.proxies[i] == state.proxies[i]) == (i == lab)
    # inputs are never mutated
    assert new.proxies is not state.proxies and state.seeds == (11, 22, 33)


def test_subround_rejects_bad_labeler(small_world):
    state, train, cfg, x = small_world
    with pytest.raises(ValueError):
        ict_subround(state, 3, x, train, cfg)


def test_co_teaching_routes_partner_selection(small_world):
    state, train, cfg, x = small_world
    seen = {}

    def obs(batch, recipient, selected, weights):
        seen[recipient] = (batch, selected)

    ict_subround(state, 0, x, train, cfg, (7,), observer=obs)
    batch = seen[1][0]
    assert list(seen[1][1].indices) == list(select_small_loss(state.proxies[2], batch, cfg.K).indices)
    assert list(seen[2][1].indices) == list(select_small_loss(state.proxies[1], batch, cfg.K).indices)
    np.testing.assert_array_equal(batch.labels, px.forward(state.proxies[0], batch.points))


@pytest.mark.parametrize("perm", [(1, 2, 0), (2, 0, 1), (1, 0, 2), (0, 2, 1)])
def test_rotation_symmetry(small_world, perm):
    state, train, cfg, x = small_world
    order = (0, 1, 2)
    plain = ict_iteration(state, x, train, cfg, (5,), order=order)
    inv = [perm.index(i) for i in range(3)]
    moved = ict_iteration(state.permuted(perm), x, train, cfg, (5,), order=tuple(inv[i] for i in order))
    for j in range(3):
        assert moved.proxies[j] == plain.proxies[perm[j]]


def test_ensemble_ascend_step_clips(bowl, small_world):
    state, _, _, _ = small_world
    x = ensemble_ascend_step(state, np.full(8, 1.99), 1e6, bowl)
    assert np.all(np.abs(x) <= 2.0)


def test_default_gamma():
    ds = OfflineDataset(np.array([[0.0, 0.0], [2.0, 4.0]]), [0.0, 1.0])
    assert default_gamma(ds) == pytest.approx(0.1 * (1.0 + 2.0) / 2)


# ---------------------------------------------------------------------------
# ascent and end-to-end


def test_ascend_min_follows_lowest_proxy(bowl):
    lo = unit_chain(w3=0.5)
    hi = lo.with_theta(lo.theta + np.array([0, 0, 0, 0, 0, 1.0]))
    task = replace(bowl, dim=1, lo=np.array([-2.0]), hi=np.array([2.0]))
    x = ascend((hi, lo), np.array([0.5]), 1, 0.1, task, "min")
    assert x[0] == pytest.approx(0.55)
    assert ascend((lo,), np.array([0.5]), 0, 0.1, task)[0] == 0.5
    with pytest.raises(ValueError):
        ascend((lo,), np.array([0.5]), 1, 0.1, task, "max")


def test_run_ict_counters_for_one_step(bowl, bowl_data, tiny_cfg):
    res = run_ict(bowl, bowl_data, replace(tiny_cfg, T=1))
    assert res.counters == {"subrounds": 3 * tiny_cfg.n_starts, "interleaved_steps": tiny_cfg.n_starts,
                            "final_steps": tiny_cfg.n_starts}
    assert res.designs.shape == (tiny_cfg.n_starts, 8)


def test_run_ict_starts_are_top_designs(bowl, bowl_data, tiny_cfg):
    res = run_ict(bowl, bowl_data, tiny_cfg)
    np.testing.assert_array_equal(res.starts, bowl_data.designs[bowl_data.top(2)])
    np.testing.assert_allclose(res.normalized, (res.scores - bowl.y_min) / (bowl.y_max - bowl.y_min))


def test_run_ict_zero_steps_returns_starts(bowl, bowl_data, tiny_cfg):
    res = run_ict(bowl, bowl_data, replace(tiny_cfg, T=0))
    np.testing.assert_array_equal(res.designs, res.starts)


def test_run_ict_never_queries_during_training(bowl, bowl_data, tiny_cfg):
    with oracle_audit() as audit:
        res = run_ict(bowl, bowl_data, replace(tiny_cfg, diagnostics=True))
    assert "training" not in audit.as_dict()
    assert res.oracle_queries["evaluation"] == tiny_cfg.n_starts + tiny_cfg.n_starts * tiny_cfg.T * 2 * tiny_cfg.M


def test_run_ict_is_deterministic(bowl, bowl_data, tiny_cfg):
    a, b = run_ict(bowl, bowl_data, tiny_cfg), run_ict(bowl, bowl_data, tiny_cfg)
    np.testing.assert_array_equal(a.designs, b.designs)


def test_diagnostics_and_trajectory(bowl, bowl_data, tiny_cfg):
    res = run_ict(bowl, bowl_data, replace(tiny_cfg, diagnostics=True, record_trajectory=True))
    assert len(res.diagnostics["L_sel"]) == tiny_cfg.T * tiny_cfg.n_starts
    assert res.diagnostics["mean_L_sel"] >= 0 and res.diagnostics["mean_L_ign"] >= 0
    assert res.trajectory.shape == (tiny_cfg.n_starts, tiny_cfg.T + 1)
    np.testing.assert_allclose(res.trajectory[:, -1], res.normalized)


def test_reduction_to_mean_ensemble(bowl, bowl_data, tiny_cfg):
    # identical proxies, no perturbation, keep everything, no reweighting:
    # every residual is exactly zero so fine-tuning is a no-op
    cfg = replace(tiny_cfg, beta=0.0, gamma=0.0, K=tiny_cfg.M, proxy_seeds=(9, 9, 9))
    ict = run_ict(bowl, bowl_data, cfg)
    mean = run_ensemble(bowl, bowl_data, cfg, "mean")
    np.testing.assert_array_equal(ict.designs, mean.designs)


def test_mismatched_dataset_width(bowl, seq, bowl_data, tiny_cfg):
    with pytest.raises(ValueError, match="columns"):
        run_ict(seq, bowl_data, tiny_cfg)


def test_fit_ensemble_uses_role_seeds(bowl_data, tiny_cfg):
    train, _, _ = bowl_data.standardized()
    ens = fit_ensemble(train, tiny_cfg)
    assert ens.seeds == tiny_cfg.seeds()
    assert ens.proxies[0] == px.train_proxy(train, tiny_cfg.epochs, tiny_cfg.batch_size, tiny_cfg.train_lr,
                                            seed=ens.seeds[0], hidden=tiny_cfg.hidden)
