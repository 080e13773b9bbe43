"""Unsupervised training, validation-based selection, and PS<->TS parameter transfer."""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from . import objective as obj
from .channels import Dataset, SystemConfig
from .model import Checkpoint, SWIPTNet
from .numerics import AdamState, GradientError, adam_step, backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch: int = 16
    lr: float = 1e-4
    seed: int = 0
    receiver: str = "ps"
    weights: obj.LossWeights = field(default_factory=obj.LossWeights)
    val_every: int = 1
    eval_chunk: int = 1024

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1 or self.lr <= 0:
            raise ValueError("need epochs >= 1, batch >= 1, lr > 0")
        if self.receiver not in ("ps", "ts"):
            raise ValueError(f"receiver must be 'ps' or 'ts', got {self.receiver!r}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_objective: float
    feasibility: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    initial_objective: float = float("nan")
    initial_feasibility: float = float("nan")
    best_epoch: int = 0

    @property
    def val_objectives(self) -> list[float]:
        return [r.val_objective for r in self.records]

    def summary(self) -> dict:
        return {
            "initial_objective": self.initial_objective,
            "initial_feasibility": self.initial_feasibility,
            "best_epoch": self.best_epoch,
            "records": [asdict(r) for r in self.records],
        }

    @classmethod
    def from_summary(cls, d) -> "TrainHistory":
        return cls([EpochRecord(**r) for r in d.get("records", [])],
                   d.get("initial_objective", float("nan")),
                   d.get("initial_feasibility", float("nan")), d.get("best_epoch", 0))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "val_objective", "feasibility", "seconds"])
            w.writerow([0, "", repr(self.initial_objective), repr(self.initial_feasibility), 0.0])
            for r in self.records:
                w.writerow([r.epoch, repr(r.loss), repr(r.val_objective), repr(r.feasibility),
                            f"{r.seconds:.3f}"])


@dataclass
class EpochEval:
    mean_sum_rate: float
    feasibility: float
    empty: bool


def model_solutions(model: SWIPTNet, H, system: SystemConfig, receiver: str, chunk=1024):
    """Inference-mode beams and ratios for a stack of channels."""
    model.eval()
    H = np.asarray(H)
    Ws, Rs = [], []
    with torch.no_grad():
        for s in range(0, len(H), chunk):
            Hc = torch.as_tensor(H[s:s + chunk])
            W, ratios = model(Hc, system)
            if ratios is None:
                ratios = obj.recover_ratio(obj.received_power(Hc, W), system.gamma_req_w)
            Ws.append(W.numpy())
            Rs.append(ratios.numpy())
    return obj.Solution(np.concatenate(Ws), np.concatenate(Rs), receiver)


def evaluate_solutions(sol: obj.Solution, H, system: SystemConfig):
    """Per-sample feasibility mask and objective values."""
    rep = obj.check_feasibility(sol, H, system)
    return rep.feasible, obj.solution_sum_rate(sol, H, system)


def evaluate_epoch(model: SWIPTNet, val_ds: Dataset, system: SystemConfig, receiver: str,
                   chunk=1024) -> EpochEval:
    """Mean sum-rate over feasible validation samples, and the feasible fraction."""
    sol = model_solutions(model, val_ds.H, system, receiver, chunk)
    feasible, rates = evaluate_solutions(sol, val_ds.H, system)
    if not feasible.any():
        return EpochEval(0.0, 0.0, True)
    return EpochEval(float(rates[feasible].mean()), float(feasible.mean()), False)


@torch.no_grad()
def calibrate_batch_norm(model: SWIPTNet, ds: Dataset, system: SystemConfig, batch: int):
    """Fill running BN statistics with one pass in training mode (no parameter update)."""
    model.train()
    for s in range(0, len(ds), batch):
        model(torch.as_tensor(ds.H[s:s + batch]), system)


def _needs_calibration(model: SWIPTNet) -> bool:
    return any(int(b) == 0 for name, b in model.named_buffers() if name.endswith("batches_tracked"))


def batch_loss(model: SWIPTNet, H, system: SystemConfig, receiver: str, weights: obj.LossWeights):
    W, ratios = model(H, system)
    if ratios is None:
        return obj.loss_single_output(W, H, system, weights, receiver).mean()
    return obj.loss_two_output(W, ratios, H, system, weights, receiver).mean()


def train(model: SWIPTNet, train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig,
          system: SystemConfig, on_epoch=None) -> tuple[Checkpoint, TrainHistory]:
    """Adam on the unsupervised loss; returns the epoch with the best validation objective."""
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if train_ds.n_tx != model.mcfg.n_tx or val_ds.n_tx != model.mcfg.n_tx:
        raise ValueError(f"dataset N_T ({train_ds.n_tx}) does not match model N_T ({model.mcfg.n_tx})")
    params = list(model.parameters())
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(cfg.seed)
    hist = TrainHistory()

    if _needs_calibration(model):
        calibrate_batch_norm(model, train_ds, system, cfg.batch)
    ev = evaluate_epoch(model, val_ds, system, cfg.receiver, cfg.eval_chunk)
    hist.initial_objective, hist.initial_feasibility = ev.mean_sum_rate, ev.feasibility
    best_val, best_state = -math.inf, None

    n = len(train_ds)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        model.train()
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for b, s in enumerate(range(0, n, cfg.batch)):
            Hb = torch.as_tensor(train_ds.H[perm[s:s + cfg.batch]])
            try:
                loss = batch_loss(model, Hb, system, cfg.receiver, cfg.weights)
                grads = backward(loss, params)
                adam_step(params, grads, state, cfg.lr)
            except (FloatingPointError, GradientError) as exc:
                raise FloatingPointError(f"epoch {epoch}, batch {b}: {exc}") from exc
            total += float(loss.detach()) * len(Hb)
            count += len(Hb)
        if epoch % cfg.val_every == 0 or epoch == cfg.epochs:
            ev = evaluate_epoch(model, val_ds, system, cfg.receiver, cfg.eval_chunk)
        rec = EpochRecord(epoch, total / count, ev.mean_sum_rate, ev.feasibility,
                          time.perf_counter() - t0)
        hist.records.append(rec)
        if rec.val_objective > best_val:
            best_val, hist.best_epoch = rec.val_objective, epoch
            best_state = copy.deepcopy(model.state_dict())
        log.info("epoch %d loss %.4f val %.4f feas %.3f (%.1fs)", epoch, rec.loss,
                 rec.val_objective, rec.feasibility, rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)

    model.load_state_dict(best_state)
    model.eval()
    ckpt = Checkpoint(model, cfg.receiver, asdict(system), hist.summary())
    return ckpt, hist


def clone_model(model: SWIPTNet) -> SWIPTNet:
    return copy.deepcopy(model)


def transfer(source: Checkpoint, target_receiver: str, train_ds: Dataset, val_ds: Dataset,
             cfg: TrainConfig, system: SystemConfig, on_epoch=None) -> tuple[Checkpoint, TrainHistory]:
    """Fine-tune a trained model for the other receiver type with a fresh optimizer state."""
    if target_receiver == source.receiver:
        raise ValueError(f"source and target receiver are both {target_receiver!r}")
    if train_ds.n_tx != source.model.mcfg.n_tx:
        raise ValueError("training set N_T does not match the source model")
    model = clone_model(source.model)
    cfg = replace(cfg, receiver=target_receiver)
    return train(model, train_ds, val_ds, cfg, system, on_epoch)
