"""Command-line entry point: ``swiptnet <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .channels import SystemConfig, make_dataset, read_dataset, write_dataset
from .evaluation import (
    ablation_suite, emit_report, make_manifest, optimality, summarize_ablation,
)
from .model import VARIANTS, Widths, build_model, load_checkpoint, save_checkpoint
from .objective import LossWeights
from .oracle import OracleConfig, closed_form_rate, label_dataset, solve_batch
from .training import TrainConfig, TrainHistory, train, transfer

log = logging.getLogger("swiptnet")

DBM_FIELDS = {"p_max_dbm": "p_max_w", "gamma_req_dbm": "gamma_req_w", "sigma_s2_dbm": "sigma_s2_w"}
WIDTH_PRESETS = {"reference": Widths.reference, "desk": Widths.desk}


def load_config(path):
    """JSON with optional sections ``system``, ``train``, ``oracle``, ``model``."""
    if path is None:
        return {}
    with open(path) as f:
        cfg = json.load(f)
    unknown = set(cfg) - {"system", "train", "oracle", "model"}
    if unknown:
        raise SystemExit(f"unknown config sections: {sorted(unknown)}")
    return cfg


def system_from(cfg: dict, **overrides) -> SystemConfig:
    from .channels import dbm_to_watt
    d = dict(cfg.get("system", {}))
    for dbm, watt in DBM_FIELDS.items():
        if dbm in d:
            d[watt] = dbm_to_watt(d.pop(dbm))
    d.update({k: v for k, v in overrides.items() if v is not None})
    return SystemConfig(**d)


def _section(cfg, name, cls, **overrides):
    d = dict(cfg.get(name, {}))
    d.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(cls)}
    bad = set(d) - known
    if bad:
        raise SystemExit(f"unknown {name} options: {sorted(bad)}")
    return d


def train_config_from(cfg, args, receiver=None) -> TrainConfig:
    d = _section(cfg, "train", TrainConfig, epochs=getattr(args, "epochs", None),
                 batch=getattr(args, "batch", None), lr=getattr(args, "lr", None),
                 seed=getattr(args, "seed", None), receiver=receiver)
    if "weights" in d and not isinstance(d["weights"], LossWeights):
        d["weights"] = LossWeights(*d["weights"]) if isinstance(d["weights"], list) else LossWeights(**d["weights"])
    return TrainConfig(**d)


def oracle_config_from(cfg, args) -> OracleConfig:
    return OracleConfig(**_section(cfg, "oracle", OracleConfig, restarts=getattr(args, "restarts", None),
                                   seed=getattr(args, "seed", None)))


def model_options(cfg, args) -> dict:
    d = dict(cfg.get("model", {}))
    w = d.pop("widths", "desk")
    d["widths"] = WIDTH_PRESETS[w]() if isinstance(w, str) else Widths(
        heads=w["heads"], gal=tuple(w["gal"]), connection=tuple(w["connection"]), decoder=tuple(w["decoder"]))
    if getattr(args, "widths", None):
        d["widths"] = WIDTH_PRESETS[args.widths]()
    if getattr(args, "input_scale", None) is not None:
        d["input_scale"] = args.input_scale
    return d


def _system_for(ds, cfg) -> SystemConfig:
    return system_from(cfg, n_tx=ds.n_tx, n_ue=ds.n_ue)


def _default_scale(opts, system):
    # unit-variance CSI at the network input unless configured otherwise
    opts.setdefault("input_scale", 1.0 / np.sqrt(system.channel_variance))
    return opts


def _progress(rec):
    log.info("epoch %3d  loss %.4f  val %.4f  feasible %.1f%%", rec.epoch, rec.loss,
             rec.val_objective, 100 * rec.feasibility)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args, cfg):
    system = system_from(cfg, n_tx=args.n_tx, n_ue=args.n_ue)
    ds = make_dataset(system, args.count, args.seed)
    write_dataset(args.out, ds)
    print(f"wrote {len(ds)} samples (N={system.n_ue}, N_T={system.n_tx}) to {args.out}")


def cmd_label(args, cfg):
    ds = read_dataset(args.dataset)
    system = _system_for(ds, cfg)
    labelled = label_dataset(ds, system, args.receiver, oracle_config_from(cfg, args))
    write_dataset(args.out, labelled)
    ok = [lab.sum_rate for lab in labelled.labels if lab.converged]
    print(f"labelled {len(ds)} samples; {len(ds) - len(ok)} without a feasible point; "
          f"mean sum-rate {np.mean(ok) if ok else float('nan'):.4f}")


def cmd_train(args, cfg):
    tr, va = read_dataset(args.dataset), read_dataset(args.val)
    system = _system_for(tr, cfg)
    opts = _default_scale(model_options(cfg, args), system)
    model = build_model(args.arch, tr.n_tx, args.l_pe or tr.n_ue, n_ue=tr.n_ue if args.arch == "mlp" else None,
                        laplace=False if args.no_laplace else None,
                        layer_connection=False if args.no_layer_connection else None,
                        single_output=not args.no_single_output, seed=args.seed or 0, **opts)
    tcfg = train_config_from(cfg, args, args.receiver)
    ckpt, hist = train(model, tr, va, tcfg, system, on_epoch=_progress)
    save_checkpoint(args.out, ckpt)
    hist.write_csv(Path(args.out).with_suffix(".history.csv"))
    print(f"best epoch {hist.best_epoch}: validation sum-rate {max(hist.val_objectives):.4f}; saved {args.out}")


def cmd_transfer(args, cfg):
    tr, va = read_dataset(args.dataset), read_dataset(args.val)
    system = _system_for(tr, cfg)
    src = load_checkpoint(getattr(args, "from"))
    tcfg = train_config_from(cfg, args, args.receiver)
    ckpt, hist = transfer(src, args.receiver, tr, va, tcfg, system, on_epoch=_progress)
    save_checkpoint(args.out, ckpt)
    hist.write_csv(Path(args.out).with_suffix(".history.csv"))
    print(f"best epoch {hist.best_epoch}: validation sum-rate {max(hist.val_objectives):.4f}; saved {args.out}")


def cmd_eval(args, cfg):
    ckpt = load_checkpoint(args.model)
    test = read_dataset(args.test)
    system = _system_for(test, cfg)
    n_tr = ckpt.system.get("n_ue", test.n_ue)
    man = make_manifest(ckpt, system, {"test": test}, ckpt.model.mcfg.seed)
    m = optimality(ckpt, test, system, n_tr=n_tr, manifest=man)
    hist = TrainHistory.from_summary(ckpt.history) if ckpt.history else None
    emit_report([m], args.report, {ckpt.receiver: hist} if hist and hist.records else None)
    print(open(Path(args.report) / "metrics.txt").read(), end="")


def cmd_ablate(args, cfg):
    tr, va, te = read_dataset(args.train), read_dataset(args.val), read_dataset(args.test)
    system = _system_for(tr, cfg)
    seeds = [int(s) for s in args.seeds.split(",")]
    opts = _default_scale(model_options(cfg, args), system)
    tcfg = train_config_from(cfg, args, args.receiver)
    rows = ablation_suite(tr, va, te, system, tcfg, seeds, widths=opts["widths"], l_pe=args.l_pe,
                          input_scale=opts["input_scale"],
                          on_row=lambda r: log.info("%s seed %d: %.2f%%", r.name, r.seed, r.metrics.value))
    emit_report([r.metrics for r in rows], args.report)
    for name, s in summarize_ablation(rows).items():
        print(f"{name:<22} optimality {s['value']:6.2f}%  feasibility {s['feasibility']:6.2f}%")


def cmd_oracle_check(args, cfg):
    system = system_from(cfg, n_ue=args.n_ue, n_tx=args.n_tx)
    if system.n_ue != 1:
        raise SystemExit("oracle-check compares against the single-UE closed form; use --n-ue 1")
    ds = make_dataset(system, args.count, args.seed)
    worst = 0.0
    for rx in ("ps", "ts"):
        labels = solve_batch(ds.H, system, rx, oracle_config_from(cfg, args))
        for h, lab in zip(ds.H, labels):
            ref = closed_form_rate(h, system, rx)
            worst = max(worst, abs(lab.sum_rate - ref) / ref)
    ok = worst < 1e-6
    print(f"max relative error vs closed form over {args.count} channels x 2 receivers: {worst:.3e} "
          f"({'PASS' if ok else 'FAIL'})")
    return 0 if ok else 1


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swiptnet", description="SWIPT beamforming with graph attention networks")
    p.add_argument("--config", help="JSON file with system/train/oracle/model sections")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate Rayleigh channel samples")
    g.add_argument("--n-ue", type=int, required=True)
    g.add_argument("--n-tx", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    g = sub.add_parser("label", help="attach oracle solutions to a dataset")
    g.add_argument("--dataset", required=True)
    g.add_argument("--receiver", choices=("ps", "ts"), required=True)
    g.add_argument("--restarts", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_label)

    def train_flags(g):
        g.add_argument("--epochs", type=int)
        g.add_argument("--batch", type=int)
        g.add_argument("--lr", type=float)
        g.add_argument("--seed", type=int)

    g = sub.add_parser("train", help="unsupervised training")
    g.add_argument("--dataset", required=True)
    g.add_argument("--val", required=True)
    g.add_argument("--receiver", choices=("ps", "ts"), default="ps")
    g.add_argument("--arch", choices=VARIANTS, default="swiptnet")
    g.add_argument("--no-laplace", action="store_true")
    g.add_argument("--no-single-output", action="store_true")
    g.add_argument("--no-layer-connection", action="store_true")
    train_flags(g)
    g.add_argument("--l-pe", type=int)
    g.add_argument("--widths", choices=sorted(WIDTH_PRESETS))
    g.add_argument("--input-scale", type=float)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("transfer", help="fine-tune a checkpoint for the other receiver")
    g.add_argument("--from", required=True, metavar="CKPT")
    g.add_argument("--receiver", choices=("ps", "ts"), required=True)
    g.add_argument("--dataset", required=True)
    g.add_argument("--val", required=True)
    train_flags(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_transfer)

    g = sub.add_parser("eval", help="optimality/scalability against oracle labels")
    g.add_argument("--model", required=True)
    g.add_argument("--test", required=True)
    g.add_argument("--report", required=True)
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("ablate", help="train and compare the ablation variants")
    g.add_argument("--receiver", choices=("ps", "ts"), required=True)
    g.add_argument("--train", required=True)
    g.add_argument("--val", required=True)
    g.add_argument("--test", required=True)
    g.add_argument("--seeds", default="0,1,2")
    train_flags(g)
    g.add_argument("--l-pe", type=int)
    g.add_argument("--widths", choices=sorted(WIDTH_PRESETS))
    g.add_argument("--input-scale", type=float)
    g.add_argument("--report", required=True)
    g.set_defaults(func=cmd_ablate)

    g = sub.add_parser("oracle-check", help="oracle vs single-UE closed form")
    g.add_argument("--n-ue", type=int, default=1)
    g.add_argument("--n-tx", type=int, default=4)
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--restarts", type=int)
    g.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = load_config(args.config)
    rc = args.func(args, cfg)
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
