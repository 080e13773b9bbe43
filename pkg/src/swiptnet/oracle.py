"""Reference solutions: per-instance penalised gradient optimiser, closed form, MRT."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from . import objective as obj
from .channels import Dataset, Label, SystemConfig
from .numerics import CDTYPE, AdamState, adam_step

log = logging.getLogger(__name__)


class InfeasibleInstance(ValueError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    restarts: int = 8
    iterations: int = 2000
    lr: float = 1e-2
    lr_decay: float = 0.5
    decay_every: int = 500
    lam_start: float = 1.0
    lam_end: float = 100.0
    perturbation: float = 0.5
    seed: int = 0
    chunk: int = 256

    def __post_init__(self):
        if self.restarts < 1 or self.iterations < 1:
            raise ValueError("restarts and iterations must be >= 1")


@dataclass
class OracleLabel:
    sum_rate: float
    solution: obj.Solution
    converged: bool
    restarts: int

    def to_label(self) -> Label:
        return Label(self.sum_rate, self.solution.W, self.solution.ratios, self.converged, self.restarts)


def mrt_beams(H, p_max_w):
    H = np.asarray(H)
    n = H.shape[-2]
    return np.sqrt(p_max_w / n) * H / np.linalg.norm(H, axis=-1, keepdims=True)


def mrt_equal_power(H, cfg: SystemConfig, receiver: str = "ps") -> obj.Solution:
    """Maximum-ratio beams with equal power split; ratios recovered and clipped to [0, 1]."""
    W = mrt_beams(H, cfg.p_max_w)
    ratios = obj.recover_ratio(obj.received_power(H, W).numpy(), cfg.gamma_req_w)
    return obj.Solution(W, np.clip(ratios, 0.0, 1.0), receiver)


def rzf_beams(H, cfg: SystemConfig):
    """Regularised zero-forcing beams scaled to the full power budget."""
    A = np.conj(np.asarray(H))  # rows h_n^H
    n = A.shape[-2]
    reg = n * cfg.sigma_s2_w / cfg.p_max_w
    gram = A @ np.conj(np.swapaxes(A, -1, -2)) + reg * np.eye(n)
    Wt = np.conj(np.swapaxes(A, -1, -2)) @ np.linalg.inv(gram)
    W = np.swapaxes(Wt, -1, -2)
    power = (np.abs(W) ** 2).sum(axis=(-2, -1), keepdims=True)
    return W * np.sqrt(cfg.p_max_w / power)


def closed_form_single_user(h, cfg: SystemConfig, receiver: str) -> obj.Solution:
    """Optimal single-UE design: full-power matched beam with the EH-binding ratio."""
    h = np.asarray(h).reshape(-1)
    gain = cfg.p_max_w * float(np.vdot(h, h).real)
    if gain < cfg.gamma_req_w:
        raise InfeasibleInstance(f"P_max*|h|^2 = {gain:.3e} W is below gamma_req = {cfg.gamma_req_w:.3e} W")
    w = np.sqrt(cfg.p_max_w) * h / np.linalg.norm(h)
    ratio = 1.0 - cfg.gamma_req_w / gain
    return obj.Solution(w[None, :], np.array([ratio]), receiver)


def closed_form_rate(h, cfg: SystemConfig, receiver: str) -> float:
    h = np.asarray(h).reshape(-1)
    gain = cfg.p_max_w * float(np.vdot(h, h).real)
    ratio = 1.0 - cfg.gamma_req_w / gain
    if receiver == "ps":
        return float(np.log2(1.0 + ratio * gain / cfg.sigma_s2_w))
    return float(ratio * np.log2(1.0 + gain / cfg.sigma_s2_w))


def _initial_points(H, cfg: SystemConfig, ocfg: OracleConfig, indices) -> np.ndarray:
    """(B, R, N, N_T) starting beams: MRT, RZF, then perturbed MRT."""
    B, n, nt = H.shape
    out = np.empty((B, ocfg.restarts, n, nt), dtype=np.complex128)
    mrt = mrt_beams(H, cfg.p_max_w)
    rzf = rzf_beams(H, cfg)
    scale = np.sqrt(cfg.p_max_w / (n * nt))
    for b, idx in enumerate(indices):
        rng = np.random.default_rng([ocfg.seed, int(idx)])
        for r in range(ocfg.restarts):
            if r == 0:
                out[b, r] = mrt[b]
            elif r == 1:
                out[b, r] = rzf[b]
            else:
                g = rng.standard_normal((n, nt, 2))
                out[b, r] = mrt[b] + ocfg.perturbation * scale * (g[..., 0] + 1j * g[..., 1])
    return out


def _objective_and_feasible(H, W, cfg: SystemConfig, receiver: str):
    """True objective with recovered ratios and a feasibility mask (no grad)."""
    with torch.no_grad():
        recv = obj.received_power(H, W)
        r = obj.recover_ratio(recv, cfg.gamma_req_w)
        rc = r.clamp(0.0, 1.0)
        power = obj.total_power(W)
        ok = (r >= 0).all(-1) & (r <= 1).all(-1) & (power <= cfg.p_max_w * (1 + obj.EPS_FEAS))
        if receiver == "ps":
            rate = obj.rate_ps(H, W, rc, cfg.sigma_s2_w)
            ok &= (rate >= cfg.r_req - obj.EPS_FEAS).all(-1)
            # EH binds exactly by construction; guard the rounding anyway
            ok &= ((1 - r) * recv >= cfg.gamma_req_w * (1 - obj.EPS_FEAS)).all(-1)
            value = rate.sum(-1)
        else:
            rate = obj.rate_ts(H, W, cfg.sigma_s2_w)
            ok &= (rc * rate >= cfg.r_req - obj.EPS_FEAS * rc).all(-1)
            value = (rc * rate).sum(-1)
    return value, ok


def solve_batch(H, cfg: SystemConfig, receiver: str, ocfg: OracleConfig = OracleConfig(),
                indices=None) -> list[OracleLabel]:
    """Solve a stack of instances H (B, N, N_T) jointly; sample b is seeded by ``indices[b]``."""
    H = np.asarray(H, dtype=np.complex128)
    B = H.shape[0]
    indices = np.arange(B) if indices is None else np.asarray(indices)
    Ht = torch.as_tensor(H, dtype=CDTYPE).unsqueeze(1)  # (B, 1, N, N_T)
    W = obj.scale_power(torch.as_tensor(_initial_points(H, cfg, ocfg, indices)), cfg.p_max_w)
    W.requires_grad_(True)
    state = AdamState.zeros_like([W])
    best_val = torch.full((B,), -np.inf, dtype=torch.float64)
    best_W = W.detach()[:, 0].clone()
    found = torch.zeros(B, dtype=torch.bool)
    lr0 = ocfg.lr * np.sqrt(cfg.p_max_w)
    loss_fn = obj.loss_ps if receiver == "ps" else obj.loss_ts

    def track(Wc):
        val, ok = _objective_and_feasible(Ht, Wc, cfg, receiver)
        val = torch.where(ok, val, torch.full_like(val, -np.inf))
        v, r = val.max(dim=1)
        better = v > best_val
        best_val[better] = v[better]
        best_W[better] = Wc[better, r[better]]
        found[:] = found | torch.isfinite(best_val)

    track(W.detach())
    for it in range(ocfg.iterations):
        frac = it / max(ocfg.iterations - 1, 1)
        lam = ocfg.lam_start * (ocfg.lam_end / ocfg.lam_start) ** frac
        lr = lr0 * ocfg.lr_decay ** (it // ocfg.decay_every)
        loss = loss_fn(W, Ht, cfg, obj.LossWeights(1.0, lam, lam)).sum()
        (g,) = torch.autograd.grad(loss, [W])
        adam_step([W], [g], state, lr)
        with torch.no_grad():
            W.copy_(obj.scale_power(W, cfg.p_max_w))
        track(W.detach())

    labels = []
    for b in range(B):
        Wb = best_W[b].numpy().copy()
        ratios = obj.recover_ratio(obj.received_power(H[b], Wb).numpy(), cfg.gamma_req_w)
        sol = obj.Solution(Wb, ratios, receiver)
        ok = bool(found[b])
        rate = float(best_val[b]) if ok else float("nan")
        labels.append(OracleLabel(rate, sol, ok, ocfg.restarts))
    return labels


def solve_instance(H, cfg: SystemConfig, receiver: str, ocfg: OracleConfig = OracleConfig(),
                   index: int = 0) -> OracleLabel:
    """Best feasible single-type-output design found over all restarts."""
    return solve_batch(np.asarray(H)[None], cfg, receiver, ocfg, [index])[0]


def label_dataset(ds: Dataset, cfg: SystemConfig, receiver: str,
                  ocfg: OracleConfig = OracleConfig()) -> Dataset:
    labels: list[OracleLabel] = []
    for start in range(0, len(ds), ocfg.chunk):
        idx = np.arange(start, min(start + ocfg.chunk, len(ds)))
        labels += solve_batch(ds.H[idx], cfg, receiver, ocfg, idx)
        log.info("labelled %d/%d", len(labels), len(ds))
    failed = sum(not lab.converged for lab in labels)
    if failed:
        log.warning("%d of %d instances found no feasible point", failed, len(ds))
    return Dataset(ds.H, receiver, [lab.to_label() for lab in labels])
