"""Optimality/scalability metrics, ablation runs and report emission."""

from __future__ import annotations

import csv
import hashlib
import io
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from . import objective as obj
from .channels import Dataset, SystemConfig
from .model import Checkpoint, Widths, build_model, checkpoint_bytes
from .training import TrainConfig, TrainHistory, model_solutions, train

EXCEED_TOL = 1e-6


class EmptyResultError(ValueError):
    pass


@dataclass
class RunManifest:
    config_fingerprint: str
    dataset_fingerprints: dict
    checkpoint_fingerprint: str
    seed: int
    timestamp: str
    tool_version: str = __version__


@dataclass
class Metrics:
    variant: str
    receiver: str
    n_tr: int
    n_te: int
    value: float  # optimality (n_te == n_tr) or scalability (n_te > n_tr), percent
    feasibility: float  # percent
    mean_inference_seconds: float
    excluded_labels: int
    eligible: int
    model_mean: float
    oracle_mean: float
    manifest: RunManifest | None = None

    @property
    def kind(self) -> str:
        return "scalability" if self.n_te > self.n_tr else "optimality"

    @property
    def exceeds_oracle(self) -> bool:
        """Above 100% means the oracle missed a better point on some sample."""
        return self.value > 100.0 + EXCEED_TOL


def checkpoint_fingerprint(ckpt: Checkpoint) -> str:
    return hashlib.sha256(checkpoint_bytes(ckpt)).hexdigest()[:16]


def make_manifest(ckpt: Checkpoint, system: SystemConfig, datasets: dict, seed: int) -> RunManifest:
    return RunManifest(system.fingerprint(), {k: d.fingerprint() for k, d in sorted(datasets.items())},
                       checkpoint_fingerprint(ckpt), seed,
                       time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))


def time_inference(model, H, system: SystemConfig, reps=100, groups=10, warmup=5) -> float:
    """Median over ``groups`` of the mean per-sample forward + ratio-recovery time."""
    model.eval()
    H = np.asarray(H)
    per_group = max(1, -(-reps // groups))

    def one(i):
        h = torch.as_tensor(H[i % len(H)][None])
        W, ratios = model(h, system)
        if ratios is None:
            obj.recover_ratio(obj.received_power(h, W), system.gamma_req_w)

    means = []
    with torch.no_grad():
        for i in range(warmup):
            one(i)
        k = 0
        for _ in range(groups):
            t0 = time.perf_counter()
            for _ in range(per_group):
                one(k)
                k += 1
            means.append((time.perf_counter() - t0) / per_group)
    return statistics.median(means)


def score(model_rates, feasible, oracle_rates, converged, allow_empty=False):
    """(percent of oracle, feasibility percent, eligible count, model mean, oracle mean)."""
    feasible = np.asarray(feasible, bool)
    converged = np.asarray(converged, bool)
    eligible = feasible & converged
    if not eligible.any():
        if allow_empty:
            return 0.0, 100.0 * float(feasible.mean()), 0, 0.0, float("nan")
        raise EmptyResultError("no sample is both model-feasible and oracle-converged")
    m = float(np.mean(np.asarray(model_rates)[eligible]))
    o = float(np.mean(np.asarray(oracle_rates)[eligible]))
    return 100.0 * m / o, 100.0 * float(feasible.mean()), int(eligible.sum()), m, o


def optimality(ckpt: Checkpoint, test_ds: Dataset, system: SystemConfig, *, n_tr: int | None = None,
               time_reps: int = 100, variant: str | None = None, manifest: RunManifest | None = None,
               allow_empty: bool = False) -> Metrics:
    """Compare a trained model with the oracle labels of ``test_ds``.

    With ``allow_empty`` a model with no eligible sample scores 0 instead of raising.
    """
    if test_ds.labels is None:
        raise ValueError("optimality needs an oracle-labelled test set")
    receiver = test_ds.receiver or ckpt.receiver
    sol = model_solutions(ckpt.model, test_ds.H, system, receiver)
    rep = obj.check_feasibility(sol, test_ds.H, system)
    rates = obj.solution_sum_rate(sol, test_ds.H, system)
    converged = np.array([lab.converged for lab in test_ds.labels])
    oracle = np.array([lab.sum_rate if lab.converged else 0.0 for lab in test_ds.labels])
    value, feas, eligible, m, o = score(rates, rep.feasible, oracle, converged, allow_empty)
    secs = time_inference(ckpt.model, test_ds.H, system, time_reps) if time_reps else float("nan")
    n_te = test_ds.n_ue
    return Metrics(variant or ckpt.model.variant, receiver, n_tr if n_tr is not None else n_te, n_te,
                   value, feas, secs, int((~converged).sum()), eligible, m, o, manifest)


def baseline_mean(sol: obj.Solution, H, system: SystemConfig) -> tuple[float, float]:
    """Mean feasible sum-rate and feasible fraction of a fixed design (e.g. MRT)."""
    feasible = obj.check_feasibility(sol, H, system).feasible
    rates = obj.solution_sum_rate(sol, H, system)
    if not feasible.any():
        return 0.0, 0.0
    return float(rates[feasible].mean()), float(feasible.mean())


# ---------------------------------------------------------------- ablation

ABLATIONS = {
    "full": {},
    "no-laplace": {"laplace": False},
    "no-single-output": {"single_output": False},
    "no-layer-connection": {"layer_connection": False},
}


@dataclass
class AblationRow:
    name: str
    seed: int
    metrics: Metrics
    history: TrainHistory = field(repr=False, default=None)


def ablation_suite(train_ds: Dataset, val_ds: Dataset, test_ds: Dataset, system: SystemConfig,
                   train_cfg: TrainConfig, seeds=(0, 1, 2), *, widths: Widths | None = None,
                   l_pe: int | None = None, input_scale: float = 1.0, names=tuple(ABLATIONS),
                   time_reps: int = 100, on_row=None) -> list[AblationRow]:
    """Train and score each ablation configuration under matched seeds."""
    rows = []
    l_pe = l_pe or train_ds.n_ue
    for name in names:
        for seed in seeds:
            model = build_model("swiptnet", train_ds.n_tx, l_pe, widths=widths, input_scale=input_scale,
                                seed=seed, **ABLATIONS[name])
            ckpt, hist = train(model, train_ds, val_ds, replace(train_cfg, seed=seed), system)
            manifest = make_manifest(ckpt, system, {"train": train_ds, "val": val_ds, "test": test_ds}, seed)
            m = optimality(ckpt, test_ds, system, n_tr=train_ds.n_ue, time_reps=time_reps,
                           variant=name, manifest=manifest, allow_empty=True)
            rows.append(AblationRow(name, seed, m, hist))
            if on_row is not None:
                on_row(rows[-1])
    return rows


def summarize_ablation(rows: list[AblationRow]) -> dict:
    """Per configuration: mean optimality and feasibility over seeds."""
    out = {}
    for name in dict.fromkeys(r.name for r in rows):
        ms = [r.metrics for r in rows if r.name == name]
        out[name] = {"value": float(np.mean([m.value for m in ms])),
                     "feasibility": float(np.mean([m.feasibility for m in ms])), "seeds": len(ms)}
    return out


# ---------------------------------------------------------------- reports

CSV_FIELDS = ["variant", "receiver", "kind", "n_tr", "n_te", "value", "feasibility",
              "mean_inference_seconds", "excluded_labels", "eligible", "model_mean", "oracle_mean",
              "exceeds_oracle", "config_fingerprint", "dataset_fingerprints", "checkpoint_fingerprint",
              "seed", "timestamp", "tool_version"]


def _row(m: Metrics) -> list:
    mf = m.manifest
    ds = ";".join(f"{k}={v}" for k, v in sorted(mf.dataset_fingerprints.items())) if mf else ""
    return [m.variant, m.receiver, m.kind, m.n_tr, m.n_te, repr(m.value), repr(m.feasibility),
            repr(m.mean_inference_seconds), m.excluded_labels, m.eligible, repr(m.model_mean),
            repr(m.oracle_mean), int(m.exceeds_oracle),
            mf.config_fingerprint if mf else "", ds, mf.checkpoint_fingerprint if mf else "",
            mf.seed if mf else "", mf.timestamp if mf else "", mf.tool_version if mf else __version__]


def metrics_csv(metrics: list[Metrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for m in metrics:
        w.writerow(_row(m))
    return buf.getvalue()


def metrics_table(metrics: list[Metrics]) -> str:
    head = f"{'variant':<22}{'rx':<4}{'N_Tr':>5}{'N_Te':>5}  {'metric':<12}{'value %':>9}{'feas %':>9}{'ms/sample':>11}{'excl':>6}"
    lines = [head, "-" * len(head)]
    for m in metrics:
        flag = "  (!) above oracle" if m.exceeds_oracle else ""
        lines.append(f"{m.variant:<22}{m.receiver:<4}{m.n_tr:>5}{m.n_te:>5}  {m.kind:<12}{m.value:>9.2f}"
                     f"{m.feasibility:>9.2f}{1e3 * m.mean_inference_seconds:>11.3f}{m.excluded_labels:>6}{flag}")
    lines.append("")
    lines.append("percentages are relative to the reference optimiser, not a certified optimum")
    return "\n".join(lines) + "\n"


def convergence_csv(histories: dict) -> str:
    """Long-format epoch curves; ``histories`` maps a curve name (e.g. direct, transfer) to a history."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["curve", "epoch", "val_objective", "feasibility"])
    for name in sorted(histories):
        h = histories[name]
        w.writerow([name, 0, repr(h.initial_objective), repr(h.initial_feasibility)])
        for r in h.records:
            w.writerow([name, r.epoch, repr(r.val_objective), repr(r.feasibility)])
    return buf.getvalue()


def emit_report(metrics: list[Metrics], out_dir, histories: dict | None = None) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    files = {"metrics.csv": metrics_csv(metrics), "metrics.txt": metrics_table(metrics)}
    if histories:
        files["convergence.csv"] = convergence_csv(histories)
    written = []
    for name, text in files.items():
        p = out / name
        p.write_text(text)
        written.append(p)
    return written
