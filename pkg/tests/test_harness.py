import json
import math
import os

import numpy as np
import pytest
from click.testing import CliRunner

from poelr import harness
from poelr.cli import main
from poelr.exceptions import InvalidInput, NoAcuteBatch
from poelr.harness import ExperimentConfig, aggregate, batch_size_search, lr_sweep, run_pipeline

BLOBS = {
    "version": 1,
    "dataset": {"kind": "blobs", "n_train": 200, "n_test": 100, "dim": 2, "classes": 4, "spread": 0.08},
    "model": {"hidden": [8], "activation": "tanh"},
    "baseline": {"kind": "constant", "eta1": 0.1},
    "train": {"epochs": 5, "batch_size": 10, "snapshots_per_epoch": 20},
    "attack": {"epsilon": 0.03, "step_size": 0.01, "steps": 3},
    "track_robust": False,
    "seeds": [0],
}

QUADRATIC = {
    "version": 1,
    "dataset": {"kind": "quadratic", "n_train": 256, "n_test": 0, "dim": 5, "L": 4.0},
    "model": {"activation": "identity", "loss_kind": "mse", "bias": False},
    "baseline": {"kind": "constant", "eta1": 0.125},
    "train": {"epochs": 100},
    "monitor": {"theta_star": "exact"},
    "track_robust": False,
    "seeds": [0, 1, 2],
}


def _cfg(base, tmp_path, **over):
    d = json.loads(json.dumps(base))
    for k, v in over.items():
        d[k] = dict(d.get(k, {}), **v) if isinstance(v, dict) else v
    d["out_dir"] = str(tmp_path / "out")
    return ExperimentConfig.from_dict(d)


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(InvalidInput):
        ExperimentConfig.from_dict(dict(BLOBS, extra=1))
    with pytest.raises(InvalidInput):
        ExperimentConfig.from_dict(dict(BLOBS, train={"epochs": 2, "lr": 0.1}))
    with pytest.raises(InvalidInput):
        ExperimentConfig.from_dict(dict(BLOBS, train={"seed": 3}))
    with pytest.raises(InvalidInput):
        ExperimentConfig.from_dict(dict(BLOBS, version=2))
    with pytest.raises(InvalidInput):
        ExperimentConfig.from_dict(dict(BLOBS, seeds=[]))


def test_config_roundtrip(tmp_path):
    cfg = _cfg(BLOBS, tmp_path)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict() and again.fingerprint() == cfg.fingerprint()
    assert cfg.with_overrides(out_dir="elsewhere").fingerprint() == cfg.fingerprint()


def test_shipped_configs_load():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    for name in sorted(os.listdir(root)):
        ExperimentConfig.load(os.path.join(root, name))


def test_pipeline_rows_and_outputs(tmp_path):
    cfg = _cfg(BLOBS, tmp_path)
    rep = run_pipeline(cfg)
    assert [r["schedule"] for r in rep.rows] == ["baseline", "poe_1", "poe_2"]
    assert rep.status == "ok"
    est = rep.rows[0]["L_est"]
    assert rep.rows[1]["eta1"] == pytest.approx(1 / est) and rep.rows[2]["eta1"] == pytest.approx(2 / est)
    out = tmp_path / "out"
    for name in ["report.json", "report.csv", "schedule_curves.csv", "acuteness_vs_batch.csv",
                 "evt_candidates.csv", "timings.json", "acc_vs_epoch_baseline.csv", "acc_vs_epoch_poe_1.csv",
                 "acc_vs_epoch_poe_2.csv", "seed0/baseline.snap", "seed0/poe_2_theta.npy"]:
        assert (out / name).exists(), name


def test_pipeline_deterministic(tmp_path):
    a = run_pipeline(_cfg(BLOBS, tmp_path / "a"))
    b = run_pipeline(_cfg(BLOBS, tmp_path / "b"))
    assert a.to_dict() == b.to_dict()
    assert (tmp_path / "a/out/report.json").read_bytes() == (tmp_path / "b/out/report.json").read_bytes()


def test_resume_skips_finished_stages(tmp_path, monkeypatch):
    cfg = _cfg(BLOBS, tmp_path)
    run_pipeline(cfg)
    first = (tmp_path / "out/report.json").read_bytes()

    def boom(*a, **k):
        raise AssertionError("stage recomputed")

    monkeypatch.setattr(harness, "train", boom)
    monkeypatch.setattr(harness, "estimate_lipschitz", boom)
    run_pipeline(cfg, resume=True)
    assert (tmp_path / "out/report.json").read_bytes() == first


def test_resume_ignores_stale_manifests(tmp_path):
    run_pipeline(_cfg(BLOBS, tmp_path))
    changed = _cfg(BLOBS, tmp_path, baseline={"eta1": 0.2})
    rep = run_pipeline(changed, resume=True)
    assert rep.rows[0]["eta1"] == 0.2


def test_aggregates_recomputable(tmp_path):
    rep = run_pipeline(_cfg(BLOBS, tmp_path, seeds=[0, 1, 2]))
    for agg in rep.aggregates:
        vals = [r["clean_acc"] for r in rep.rows if r["schedule"] == agg["schedule"]]
        assert agg["clean_acc_mean"] == pytest.approx(np.mean(vals), abs=1e-12)
        assert agg["clean_acc_std"] == pytest.approx(np.std(vals, ddof=1), abs=1e-12)
    assert aggregate([])[0]["clean_acc_mean"] is None


def test_no_eligible_cell_keeps_baseline(tmp_path):
    # one initial shape can never straddle alpha
    rep = run_pipeline(_cfg(BLOBS, tmp_path, estimator={"M_list": [20], "N_list": [20], "shape0_list": [1.0]}))
    assert rep.status == "partial"
    assert rep.rows[0]["status"] == "ok" and rep.rows[0]["clean_acc"] is not None
    assert [r["status"] for r in rep.rows[1:]] == ["no_eligible_cell"] * 2


def test_divergent_baseline_recorded(tmp_path):
    rep = run_pipeline(_cfg(QUADRATIC, tmp_path, baseline={"eta1": 5.0}, seeds=[0]))
    assert rep.rows[0]["status"] == "diverged"
    assert rep.status == "partial"


def test_quadratic_oracle_composition(tmp_path):
    cfg = _cfg(QUADRATIC, tmp_path)
    rep = run_pipeline(cfg)
    L = cfg.dataset.L
    for r in rep.rows:
        if r["L_est"] is None:
            # a seed without an eligible cell reports no estimate and no PoE arms
            assert r["schedule"] == "baseline" or r["status"] == "no_eligible_cell"
            continue
        assert L <= r["L_est"] <= 3 * L
        assert r["acuteness_fraction"] == 1.0


def test_batch_search_full_batch_quadratic(tmp_path):
    cfg = _cfg(QUADRATIC, tmp_path, seeds=[0], train={"epochs": 30})
    # regression data has no accuracy, so the search cannot finish; the table still shows full batch
    with pytest.raises(NoAcuteBatch) as err:
        batch_size_search(cfg, [256], 0.5)
    assert err.value.table[0]["acuteness_fraction"] == 1.0


def test_batch_search_selection_rule(tmp_path, monkeypatch):
    cfg = _cfg(BLOBS, tmp_path)
    seen = {}
    real_train, real_monitor = harness.train, harness.monitor_run

    def spy_train(spec, ds, sched, tcfg, **kw):
        seen["b"] = tcfg.batch_size
        return real_train(spec, ds, sched, tcfg, **kw)

    class Fake:
        def __init__(self, frac):
            self.acute_fraction = frac

    monkeypatch.setattr(harness, "train", spy_train)
    monkeypatch.setattr(harness, "monitor_run", lambda log, star=None: Fake(1.0 if seen["b"] is None else 0.5))
    res = batch_size_search(cfg, [8, 64, 200], 0.3)
    assert res.chosen == 200
    assert [r["acuteness_fraction"] for r in res.table] == [0.5, 0.5, 1.0]
    # full batch reaches 0.49 here, so a 0.5 threshold steps down to the next candidate
    assert res.table[2]["clean_acc"] < 0.5 <= res.table[1]["clean_acc"]
    assert batch_size_search(cfg, [8, 64, 200], 0.5).chosen == 64
    monkeypatch.setattr(harness, "monitor_run", real_monitor)
    with pytest.raises(NoAcuteBatch):
        batch_size_search(cfg, [8, 64, 200], 1.01)


def test_batch_search_steps_down(tmp_path):
    cfg = _cfg(BLOBS, tmp_path)
    res = batch_size_search(cfg, [10, 50, 200], 0.3, out_dir=str(tmp_path / "bs"))
    start = next(i for i, r in enumerate(res.table) if r["acuteness_fraction"] == 1.0)
    assert res.chosen <= res.table[start]["batch_size"]
    assert (tmp_path / "bs/acuteness_vs_batch.csv").exists()
    with pytest.raises(InvalidInput):
        batch_size_search(cfg, [50, 10], 0.3)


def test_lr_sweep_flags_divergence(tmp_path):
    cfg = _cfg(BLOBS, tmp_path, model={"hidden": [], "activation": "identity", "loss_kind": "mse"},
               train={"epochs": 100, "batch_size": None, "snapshots_per_epoch": 1},
               lr_sweep={"unit": "analytic_L"})
    rows = lr_sweep(cfg, [0.5, 1.0, 2.0, 4.0], out_dir=str(tmp_path / "sw"))
    assert [r["diverged"] for r in rows] == [False, False, False, True]
    assert len(lr_sweep(cfg, [0.5])) == 1
    assert (tmp_path / "sw/lr_sweep.csv").exists()


def test_lr_sweep_classifier_rows(tmp_path):
    rows = lr_sweep(_cfg(BLOBS, tmp_path), [0.05, 0.2])
    assert all(0 <= r["robust_acc"] <= r["clean_acc"] <= 1 for r in rows)


def test_cli_verbs(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(dict(BLOBS, out_dir=str(tmp_path / "cli"),
                                        batch_search={"candidates": [10, 200], "acc_threshold": 0.3},
                                        lr_sweep={"eta_grid": [0.1]})))
    r = CliRunner()
    base = ["--config", str(cfg_path)]
    for verb in ["train", "estimate", "poe-train", "verify", "attack"]:
        res = r.invoke(main, [verb, *base])
        assert res.exit_code == 0, (verb, res.output)
    assert (tmp_path / "cli/seed0/monitor_poe_1.csv").exists()
    assert (tmp_path / "cli/attack.json").exists()
    res = r.invoke(main, ["pipeline", *base, "--resume"])
    assert res.exit_code == 0 and json.loads(res.output)["status"] == "ok"
    res = r.invoke(main, ["pipeline", *base, "--out", str(tmp_path / "other"), "--seed", "3"])
    assert res.exit_code == 0
    assert json.loads((tmp_path / "other/report.json").read_text())["rows"][0]["seed"] == 3
    for verb in ["batch-search", "lr-sweep"]:
        res = r.invoke(main, [verb, *base])
        assert res.exit_code == 0, (verb, res.output)
    assert r.invoke(main, ["train"]).exit_code != 0
