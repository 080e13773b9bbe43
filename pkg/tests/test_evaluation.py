from dataclasses import asdict

import numpy as np
import pytest

from swiptnet import evaluation as ev
from swiptnet.channels import Dataset, Label, SystemConfig, make_dataset
from swiptnet.model import Checkpoint, Widths, build_model
from swiptnet.oracle import OracleConfig, label_dataset
from swiptnet.training import TrainConfig, TrainHistory, EpochRecord, calibrate_batch_norm

CFG = SystemConfig(n_tx=4, n_ue=3)


def test_score_hand_computed():
    model = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0])
    oracle = np.array([2.0, 2.0, 4.0, 4.0, 6.0, 6.0, 8.0, 8.0, 10.0, 10.0])
    feasible = np.array([1, 1, 1, 0, 1, 1, 0, 1, 1, 1], bool)
    converged = np.array([1, 1, 1, 1, 1, 0, 1, 1, 1, 1], bool)
    value, feas, n, m, o = ev.score(model, feasible, oracle, converged)
    # eligible: 0 1 2 4 7 8 9
    assert n == 7
    assert m == pytest.approx((1 + 2 + 3 + 5 + 8 + 9 + 10) / 7, rel=1e-15)
    assert o == pytest.approx((2 + 2 + 4 + 6 + 8 + 10 + 10) / 7, rel=1e-15)
    assert value == pytest.approx(100 * 38 / 42, rel=1e-14)
    assert feas == pytest.approx(80.0)


def test_score_self_comparison():
    r = np.linspace(1, 2, 10)
    assert ev.score(r, np.ones(10, bool), r, np.ones(10, bool))[0] == pytest.approx(100.0, rel=1e-15)


def test_score_empty():
    with pytest.raises(ev.EmptyResultError):
        ev.score(np.ones(3), np.zeros(3, bool), np.ones(3), np.ones(3, bool))
    assert ev.score(np.ones(3), np.zeros(3, bool), np.ones(3), np.ones(3, bool), allow_empty=True)[0] == 0.0


@pytest.fixture(scope="module")
def trained():
    m = build_model("swiptnet", 4, 4, widths=Widths.tiny(4, 2), input_scale=100.0)
    tr = make_dataset(CFG, 32, seed=0)
    calibrate_batch_norm(m, tr, CFG, 16)
    m.eval()
    test = label_dataset(make_dataset(CFG, 10, seed=7), CFG, "ps",
                         OracleConfig(restarts=2, iterations=200, decay_every=100))
    return Checkpoint(m, "ps", asdict(CFG)), test


def test_optimality_oracle_labels_self(trained):
    ckpt, test = trained
    m = ev.optimality(ckpt, test, CFG, time_reps=10)
    assert m.kind == "optimality" and m.n_te == m.n_tr == 3
    assert 0 <= m.feasibility <= 100 and m.excluded_labels == 0
    assert m.mean_inference_seconds > 0


def test_optimality_counts_unconverged(trained):
    ckpt, test = trained
    labels = list(test.labels)
    labels[0] = Label(float("nan"), labels[0].W, labels[0].ratios, False, 2)
    m = ev.optimality(ckpt, Dataset(test.H, "ps", labels), CFG, time_reps=0, allow_empty=True)
    assert m.excluded_labels == 1


def test_scalability_kind(trained):
    ckpt, test = trained
    m = ev.optimality(ckpt, test, CFG, n_tr=2, time_reps=0, allow_empty=True)
    assert m.kind == "scalability"


def test_unlabelled_rejected(trained):
    ckpt, test = trained
    with pytest.raises(ValueError):
        ev.optimality(ckpt, Dataset(test.H), CFG)


def _metrics(value=93.0, manifest=True):
    man = ev.RunManifest("cfg", {"test": "abc"}, "ck", 0, "2026-01-01T00:00:00Z") if manifest else None
    return ev.Metrics("swiptnet", "ps", 4, 4, value, 99.0, 1e-3, 0, 10, 9.3, 10.0, man)


def test_exceedance_flagged():
    assert _metrics(100.5).exceeds_oracle and not _metrics(99.0).exceeds_oracle
    assert "above oracle" in ev.metrics_table([_metrics(100.5)])


def test_report_schema_and_determinism(tmp_path):
    h = TrainHistory([EpochRecord(1, -1.0, 2.0, 0.9, 1.0)], 1.0, 0.8, 1)
    ms = [_metrics(), _metrics(80.0)]
    files = ev.emit_report(ms, tmp_path / "a", {"direct": h, "transfer": h})
    ev.emit_report(ms, tmp_path / "b", {"direct": h, "transfer": h})
    for f in files:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    rows = (tmp_path / "a" / "metrics.csv").read_text().splitlines()
    assert rows[0].split(",") == ev.CSV_FIELDS and len(rows) == 3
    conv = (tmp_path / "a" / "convergence.csv").read_text()
    assert "direct,0," in conv and "transfer,1," in conv


def test_report_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        ev.emit_report([_metrics()], blocker / "sub")


def test_ablation_rows_share_test_fingerprint(trained):
    _, test = trained
    tr, va = make_dataset(CFG, 32, seed=1), make_dataset(CFG, 8, seed=2)
    rows = ev.ablation_suite(tr, va, test, CFG, TrainConfig(epochs=1, lr=1e-3), seeds=(0,),
                             widths=Widths.tiny(4, 2), l_pe=4, input_scale=100.0, time_reps=0)
    assert [r.name for r in rows] == list(ev.ABLATIONS)
    fps = {r.metrics.manifest.dataset_fingerprints["test"] for r in rows}
    assert len(fps) == 1
    assert all(0 <= r.metrics.feasibility <= 100 for r in rows)
    assert set(ev.summarize_ablation(rows)) == set(ev.ABLATIONS)


def test_baseline_mean_all_infeasible():
    H = make_dataset(CFG, 3, seed=0).H
    from swiptnet.objective import Solution
    assert ev.baseline_mean(Solution(np.zeros_like(H), np.zeros((3, 3)), "ps"), H, CFG) == (0.0, 0.0)
