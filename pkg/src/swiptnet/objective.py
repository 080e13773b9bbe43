"""Rates, harvested power, power projection, ratio recovery and training losses.

All functions are vectorised: ``H`` and ``W`` have shape ``(..., N, N_T)``
where row ``n`` holds ``h_n`` / ``w_n``; per-UE quantities come back with
shape ``(..., N)``. Rates are in bit/s/Hz (log base 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .channels import SystemConfig
from .numerics import CDTYPE, abs2, log2

EPS_RHO = 1e-9
EPS_ALPHA = 1e-6
EPS_FEAS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    lam0: float = 1.0
    lam1: float = 5.0
    lam2: float = 5.0

    def __post_init__(self):
        if self.lam0 <= 0 or self.lam1 < 0 or self.lam2 < 0:
            raise ValueError("loss weights must satisfy lam0 > 0, lam1 >= 0, lam2 >= 0")


@dataclass
class Solution:
    W: np.ndarray
    ratios: np.ndarray
    receiver: str


@dataclass
class FeasibilityReport:
    rate_ok: np.ndarray
    eh_ok: np.ndarray
    power_ok: np.ndarray
    ratio_ok: np.ndarray
    rate_slack: np.ndarray
    eh_slack: np.ndarray
    power_slack: np.ndarray
    feasible: np.ndarray


def _t(x):
    if isinstance(x, torch.Tensor):
        return x
    x = np.asarray(x)
    return torch.as_tensor(x, dtype=CDTYPE if np.iscomplexobj(x) else torch.float64)


def gain_matrix(H, W):
    """``[..., n, i] = |h_n^H w_i|^2``."""
    H, W = _t(H), _t(W)
    return abs2(H.conj() @ W.transpose(-2, -1))


def received_power(H, W):
    return gain_matrix(H, W).sum(-1)


def _desired_interference(H, W):
    g = gain_matrix(H, W)
    desired = torch.diagonal(g, dim1=-2, dim2=-1)
    return desired, g.sum(-1) - desired


def rate_ps(H, W, rho, sigma_s2):
    desired, interf = _desired_interference(H, W)
    rho = _t(rho)
    return log2(1.0 + rho * desired / (rho * interf + sigma_s2))


def eh_ps(H, W, rho):
    return (1.0 - _t(rho)) * received_power(H, W)


def rate_ts(H, W, sigma_s2):
    desired, interf = _desired_interference(H, W)
    return log2(1.0 + desired / (interf + sigma_s2))


def total_power(W):
    return abs2(_t(W)).sum(dim=(-2, -1))


def scale_power(W, p_max_w):
    """Scale all beams jointly so the sum power is at most ``p_max_w``."""
    W = _t(W)
    total = total_power(W)
    factor = torch.sqrt(p_max_w / torch.clamp(total, min=p_max_w))
    return W * factor[..., None, None]


def recover_ratio(received_power_w, gamma_req_w):
    """EH-binding PS/TS ratio ``1 - gamma_req / received``; negative means infeasible."""
    return 1.0 - gamma_req_w / received_power_w


def substituted_ratio(H, W, cfg: SystemConfig, receiver: str):
    rho = recover_ratio(received_power(H, W), cfg.gamma_req_w)
    if receiver == "ps":
        return torch.clamp(rho, EPS_RHO, 1.0)
    return torch.clamp(rho, EPS_ALPHA, 1.0 - EPS_ALPHA)


def rate_ps_substituted(H, W, cfg: SystemConfig):
    return rate_ps(H, W, substituted_ratio(H, W, cfg, "ps"), cfg.sigma_s2_w)


def _finite(loss):
    if bool(torch.isnan(loss).any()):
        raise FloatingPointError("loss evaluated to NaN")
    return loss


def loss_ps(W, H, cfg: SystemConfig, lam: LossWeights = LossWeights()):
    """Penalised negative sum-rate with the single-type-output PS ratio."""
    H, W = _t(H), _t(W)
    rate = rate_ps_substituted(H, W, cfg)
    recv = received_power(H, W)
    loss = (-lam.lam0 * rate.sum(-1)
            + lam.lam1 * torch.relu(cfg.r_req - rate).sum(-1)
            + lam.lam2 * torch.relu(cfg.gamma_req_w - recv).sum(-1))
    return _finite(loss)


def loss_ts(W, H, cfg: SystemConfig, lam: LossWeights = LossWeights()):
    H, W = _t(H), _t(W)
    recv = received_power(H, W)
    alpha = torch.clamp(recover_ratio(recv, cfg.gamma_req_w), EPS_ALPHA, 1.0 - EPS_ALPHA)
    rate = rate_ts(H, W, cfg.sigma_s2_w)
    loss = (-lam.lam0 * (alpha * rate).sum(-1)
            + lam.lam1 * torch.relu(cfg.r_req / alpha - rate).sum(-1)
            + lam.lam2 * torch.relu(cfg.gamma_req_w / (1.0 - alpha) - recv).sum(-1))
    return _finite(loss)


def loss_single_output(W, H, cfg, lam, receiver):
    return loss_ps(W, H, cfg, lam) if receiver == "ps" else loss_ts(W, H, cfg, lam)


def loss_two_output(W, ratios, H, cfg: SystemConfig, lam: LossWeights, receiver: str):
    """Loss for a model that outputs both beams and ratios (ratios in (0, 1))."""
    H, W, ratios = _t(H), _t(W), _t(ratios)
    if bool(((ratios <= 0) | (ratios >= 1)).any()):
        raise ValueError("ratios must lie strictly inside (0, 1)")
    recv = received_power(H, W)
    if receiver == "ps":
        rate = rate_ps(H, W, ratios, cfg.sigma_s2_w)
        loss = (-lam.lam0 * rate.sum(-1)
                + lam.lam1 * torch.relu(cfg.r_req - rate).sum(-1)
                + lam.lam2 * torch.relu(cfg.gamma_req_w - (1.0 - ratios) * recv).sum(-1))
    else:
        rate = rate_ts(H, W, cfg.sigma_s2_w)
        loss = (-lam.lam0 * (ratios * rate).sum(-1)
                + lam.lam1 * torch.relu(cfg.r_req / ratios - rate).sum(-1)
                + lam.lam2 * torch.relu(cfg.gamma_req_w / (1.0 - ratios) - recv).sum(-1))
    return _finite(loss)


def sum_rate(H, W, ratios, receiver: str, sigma_s2):
    """The receiver's objective: sum of R^PS, or sum of alpha * R^TS."""
    if receiver == "ps":
        return rate_ps(H, W, ratios, sigma_s2).sum(-1)
    return (_t(ratios) * rate_ts(H, W, sigma_s2)).sum(-1)


def recover_solution(H, W, cfg: SystemConfig, receiver: str) -> Solution:
    """Attach unclamped recovered ratios to a beamforming design."""
    with torch.no_grad():
        ratios = recover_ratio(received_power(H, W), cfg.gamma_req_w)
    return Solution(np.asarray(_t(W).detach()), ratios.numpy(), receiver)


def check_feasibility(sol: Solution, H, cfg: SystemConfig, eps_feas: float = EPS_FEAS) -> FeasibilityReport:
    """Constraint check for one solution or a batch (leading dims broadcast)."""
    H, W = _t(H), _t(sol.W)
    r = np.asarray(sol.ratios, dtype=np.float64)
    with torch.no_grad():
        recv = received_power(H, W).numpy()
        power = total_power(W).numpy()
        if sol.receiver == "ps":
            rho = np.clip(r, 0.0, 1.0)
            rate = rate_ps(H, W, torch.as_tensor(rho), cfg.sigma_s2_w).numpy()
            rate_need = np.full_like(rate, cfg.r_req)
            with np.errstate(invalid="ignore"):
                eh = np.where(recv > 0, (1.0 - r) * recv, 0.0)
            eh_need = np.full_like(eh, cfg.gamma_req_w)
        else:
            rate = rate_ts(H, W, cfg.sigma_s2_w).numpy()
            with np.errstate(divide="ignore", invalid="ignore"):
                rate_need = np.where(r > 0, cfg.r_req / np.where(r > 0, r, 1.0), np.inf)
                eh_need = np.where(r < 1, cfg.gamma_req_w / np.where(r < 1, 1.0 - r, 1.0), np.inf)
            eh = recv
    rate_slack = rate - rate_need
    eh_slack = eh - eh_need
    power_slack = cfg.p_max_w - power
    rate_ok = rate >= rate_need - eps_feas
    eh_ok = eh >= eh_need * (1.0 - eps_feas)
    power_ok = power <= cfg.p_max_w * (1.0 + eps_feas)
    ratio_ok = (r >= 0.0) & (r <= 1.0)
    feasible = rate_ok.all(-1) & eh_ok.all(-1) & ratio_ok.all(-1) & power_ok
    return FeasibilityReport(rate_ok, eh_ok, power_ok, ratio_ok,
                             rate_slack, eh_slack, power_slack, feasible)


def solution_sum_rate(sol: Solution, H, cfg: SystemConfig) -> np.ndarray:
    r = np.clip(np.asarray(sol.ratios, dtype=np.float64), 0.0, 1.0)
    with torch.no_grad():
        return sum_rate(_t(H), _t(sol.W), torch.as_tensor(r), sol.receiver, cfg.sigma_s2_w).numpy()
