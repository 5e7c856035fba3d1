"""Command line entry point: ``poelr <verb> --config cfg.json [--out DIR] [--seed S] [--resume]``.

Single-stage verbs reuse finished upstream stages found in the output
directory and recompute their own stage unless ``--resume`` is given.
"""
import json
import os
import sys

import click

from . import harness
from .attack import evaluate
from .exceptions import NoAcuteBatch, PoEError
from .poeverify import monitor_run


def _load(config, out, seed):
    cfg = harness.ExperimentConfig.load(config)
    return cfg.with_overrides(out_dir=out, seed=seed)


def _echo(obj):
    click.echo(json.dumps(harness._jsonable(obj), indent=2, sort_keys=True))


def _options(f):
    f = click.option("--resume", is_flag=True, help="Reuse finished stages in the output directory.")(f)
    f = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                     help="Run only this seed instead of the config's seed list.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default=None,
                     help="Output directory (overrides out_dir in the config).")(f)
    f = click.option("--config", type=click.Path(exists=True, dir_okay=False), required=True,
                     help="Experiment config (JSON).")(f)
    return f


def _runs(cfg, resume, target):
    data = harness.load_datasets(cfg.dataset)
    for seed in cfg.seeds:
        yield harness.SeedRun(cfg, seed, resume=True, data=data, force=() if resume else target)


@click.group()
def main():
    """Persistency-of-excitation learning rates: train, estimate, verify, attack."""


@main.command()
@_options
def train(config, out, seed, resume):
    """Train the baseline schedule and save its snapshot log."""
    cfg = _load(config, out, seed)
    for run in _runs(cfg, resume, {"train_baseline"}):
        res = run.train_arm("baseline")
        last = res["history"][-1] if res["history"] else {}
        _echo({"seed": run.seed, "status": res["status"], "final": last,
               "snapshots": run.path("baseline.snap")})


@main.command()
@_options
def estimate(config, out, seed, resume):
    """Estimate the gradient Lipschitz constant from the baseline snapshots."""
    cfg = _load(config, out, seed)
    rows = []
    for run in _runs(cfg, resume, {"estimate"}):
        est = run.estimate()
        rows.extend(dict(c, seed=run.seed) for c in est.get("candidates", []))
        _echo({"seed": run.seed, **{k: v for k, v in est.items() if k != "candidates"}})
    harness.write_csv(os.path.join(cfg.out_dir, "evt_candidates.csv"), rows,
                      ("seed",) + harness.CANDIDATE_COLUMNS)


@main.command("poe-train")
@_options
@click.option("--multiplier", type=click.Choice(["1", "2", "both"]), default="both",
              help="Train the 1/L_est arm, the 2/L_est arm, or both.")
def poe_train(config, out, seed, resume, multiplier):
    """Retrain with the baseline shape rescaled to start at 1/L_est and/or 2/L_est."""
    cfg = _load(config, out, seed)
    arms = ["poe_1", "poe_2"] if multiplier == "both" else [f"poe_{multiplier}"]
    for run in _runs(cfg, resume, {f"train_{a}" for a in arms}):
        for arm in arms:
            res = run.train_arm(arm)
            _echo({"seed": run.seed, "schedule": arm, "status": res["status"], "eta1": res["eta1"]})


@main.command()
@_options
def verify(config, out, seed, resume):
    """Monitor acuteness and the reference-system fit for every trained schedule."""
    cfg = _load(config, out, seed)
    for run in _runs(cfg, True, ()):
        for arm in harness.ARMS:
            if not os.path.exists(run.path(f"{arm}.snap")):
                continue
            log = harness.epoch_records(run.log(arm), run.tcfg.snapshots_per_epoch)
            mon = monitor_run(log, run.theta_star(arm), cfg.monitor.delta, cfg.monitor.c_fill)
            mon.to_csv(run.path(f"monitor_{arm}.csv"))
            _echo({"seed": run.seed, "schedule": arm, "acuteness_fraction": mon.acute_fraction,
                   "construct_fraction": mon.construct_fraction})


@main.command()
@_options
def attack(config, out, seed, resume):
    """Clean and PGD accuracy of every trained schedule."""
    cfg = _load(config, out, seed)
    results = []
    for run in _runs(cfg, True, ()):
        for arm in harness.ARMS:
            if not os.path.exists(run.path(f"{arm}_theta.npy")):
                continue
            clean, robust = evaluate(run.spec, run.theta(arm), run.test_ds, run.acfg)
            results.append({"seed": run.seed, "schedule": arm, "clean_acc": clean, "robust_acc": robust})
    os.makedirs(cfg.out_dir, exist_ok=True)
    harness.write_json(os.path.join(cfg.out_dir, "attack.json"), results)
    _echo(results)


@main.command()
@_options
def pipeline(config, out, seed, resume):
    """Baseline, estimate, PoE retraining, monitoring and attack, then reports."""
    cfg = _load(config, out, seed)
    report = harness.run_pipeline(cfg, resume=resume)
    _echo({"status": report.status, "aggregates": report.aggregates})


@main.command("batch-search")
@_options
def batch_search(config, out, seed, resume):
    """Choose a batch size by acuteness first, clean accuracy second."""
    cfg = _load(config, out, seed)
    try:
        res = harness.batch_size_search(cfg, out_dir=cfg.out_dir)
    except NoAcuteBatch as exc:
        _echo({"error": str(exc), "table": exc.table})
        sys.exit(2)
    _echo({"chosen": res.chosen, "table": res.table})


@main.command("lr-sweep")
@_options
def lr_sweep(config, out, seed, resume):
    """Clean and PGD accuracy for each constant learning rate in the grid."""
    cfg = _load(config, out, seed)
    _echo(harness.lr_sweep(cfg, out_dir=cfg.out_dir))


def run():
    try:
        main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except PoEError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    run()
