import numpy as np
import pytest

from swiptnet import objective as obj
from swiptnet.channels import SystemConfig, generate_channels, make_dataset
from swiptnet.oracle import (
    InfeasibleInstance, OracleConfig, closed_form_rate, closed_form_single_user, label_dataset,
    mrt_beams, mrt_equal_power, rzf_beams, solve_batch, solve_instance,
)

FAST = OracleConfig(restarts=3, iterations=300, decay_every=100)


@pytest.mark.parametrize("receiver", ["ps", "ts"])
def test_single_user_matches_closed_form(receiver):
    cfg = SystemConfig(n_tx=4, n_ue=1)
    H = generate_channels(cfg, 10, seed=11)
    for lab, h in zip(solve_batch(H, cfg, receiver, FAST), H):
        assert lab.converged
        ref = closed_form_rate(h, cfg, receiver)
        assert abs(lab.sum_rate - ref) / ref < 1e-6


def test_closed_form_is_feasible():
    cfg = SystemConfig(n_tx=4, n_ue=1)
    for h in generate_channels(cfg, 20, seed=3):
        for rx in ("ps", "ts"):
            sol = closed_form_single_user(h, cfg, rx)
            if closed_form_rate(h, cfg, rx) >= cfg.r_req:
                assert bool(obj.check_feasibility(sol, h[None], cfg).feasible)


def test_closed_form_infeasible_instance():
    cfg = SystemConfig(n_tx=2, n_ue=1)
    with pytest.raises(InfeasibleInstance):
        closed_form_single_user(np.array([1e-5, 0j]), cfg, "ps")


def test_mrt_power_and_direction(rng):
    cfg = SystemConfig(n_tx=4, n_ue=3)
    H = generate_channels(cfg, 5, seed=1)
    W = mrt_beams(H, cfg.p_max_w)
    assert np.allclose((np.abs(W) ** 2).sum((-2, -1)), 1.0, rtol=1e-14)
    assert np.allclose((np.abs(W) ** 2).sum(-1), 1 / 3, rtol=1e-14)
    cos = np.abs((np.conj(H) * W).sum(-1)) / (np.linalg.norm(H, axis=-1) * np.linalg.norm(W, axis=-1))
    assert np.allclose(cos, 1.0, rtol=1e-13)


def test_mrt_ratios_clipped():
    cfg = SystemConfig(n_tx=2, n_ue=2, gamma_req_w=1.0)
    sol = mrt_equal_power(generate_channels(cfg, 3, seed=0), cfg, "ts")
    assert sol.receiver == "ts" and sol.ratios.min() >= 0 and sol.ratios.max() <= 1


def test_rzf_uses_full_budget():
    cfg = SystemConfig(n_tx=4, n_ue=4)
    W = rzf_beams(generate_channels(cfg, 4, seed=2), cfg)
    assert np.allclose((np.abs(W) ** 2).sum((-2, -1)), cfg.p_max_w, rtol=1e-12)


@pytest.mark.parametrize("receiver", ["ps", "ts"])
def test_oracle_dominates_mrt(receiver):
    cfg = SystemConfig(n_tx=4, n_ue=4)
    H = generate_channels(cfg, 16, seed=5)
    mrt = mrt_equal_power(H, cfg, receiver)
    feas = obj.check_feasibility(mrt, H, cfg).feasible
    mrt_rate = obj.solution_sum_rate(mrt, H, cfg)
    for b, lab in enumerate(solve_batch(H, cfg, receiver, FAST)):
        if feas[b]:
            assert lab.converged and lab.sum_rate >= mrt_rate[b] * (1 - 1e-9)


def test_oracle_beats_rzf_on_average():
    cfg = SystemConfig(n_tx=4, n_ue=4)
    H = generate_channels(cfg, 16, seed=6)
    labels = solve_batch(H, cfg, "ps", FAST)
    W = rzf_beams(H, cfg)
    rzf = obj.solution_sum_rate(obj.recover_solution(H, W, cfg, "ps"), H, cfg)
    assert np.mean([lab.sum_rate for lab in labels]) > np.mean(rzf)


@pytest.mark.parametrize("receiver", ["ps", "ts"])
def test_converged_labels_are_feasible(receiver):
    cfg = SystemConfig(n_tx=4, n_ue=3)
    ds = label_dataset(make_dataset(cfg, 12, seed=4), cfg, receiver, FAST)
    assert ds.receiver == receiver
    for h, lab in zip(ds.H, ds.labels):
        sol = obj.Solution(lab.W, lab.ratios, receiver)
        if lab.converged:
            assert bool(obj.check_feasibility(sol, h[None], cfg).feasible)
            assert lab.sum_rate == pytest.approx(float(obj.solution_sum_rate(sol, h[None], cfg)[0]), rel=1e-12)


def test_label_power_projected():
    cfg = SystemConfig(n_tx=4, n_ue=3)
    lab = solve_instance(generate_channels(cfg, 1, seed=9)[0], cfg, "ps", FAST)
    assert float(obj.total_power(lab.solution.W)) <= cfg.p_max_w * (1 + 1e-12)


def test_labelling_deterministic():
    cfg = SystemConfig(n_tx=4, n_ue=3)
    ds = make_dataset(cfg, 6, seed=4)
    a = label_dataset(ds, cfg, "ps", FAST)
    b = label_dataset(ds, cfg, "ps", OracleConfig(restarts=3, iterations=300, decay_every=100, chunk=4))
    for la, lb in zip(a.labels, b.labels):
        assert la.W.tobytes() == lb.W.tobytes() and la.sum_rate == lb.sum_rate


def test_no_feasible_point_reported():
    cfg = SystemConfig(n_tx=2, n_ue=2, r_req=50.0)
    lab = solve_instance(generate_channels(cfg, 1, seed=0)[0], cfg, "ps", FAST)
    assert not lab.converged and np.isnan(lab.sum_rate)


def test_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(restarts=0)
