"""Command-line surface for the sleep staging pipeline.

Every command reads an optional YAML run-config file; command-line flags
override file keys. Outputs land under the declared output directory next to
a run manifest. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import torch
import yaml

from . import augment, bench, report, sigproc
from .datastore import Dataset, SynthConfig, generate_synthetic, ingest, open_dataset, stream_windows
from .net import (EpochEncoder, NetConfig, config_from_checkpoint,
                  load_checkpoint, read_checkpoint, save_checkpoint)
from .objectives import METHODS, default_hyperparams
from .trainer import (EpochSource, FinetuneConfig, RunManifest,
                      evaluate, finetune, fit_pool_norm, pretrain)

NET_PRESETS = {
    "default": NetConfig(),
    "small": NetConfig(conv_widths=(8, 16, 16, 64), seq_width=32),
}


def _out_dir(path: str) -> Path:
    root = os.environ.get("SLEEPSSL_OUT")
    p = Path(path)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    cfg = yaml.safe_load(Path(path).read_text())
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise click.UsageError(f"config file {path} must be a mapping")
    return cfg


def _opt(flag_value, cfg: dict, key: str, default):
    """Flags beat config-file keys beat defaults."""
    if flag_value is not None:
        return flag_value
    if key in cfg:
        return cfg[key]
    return default


def runtime_errors(fn):
    """Map runtime failures to exit 1 with a machine-parsable first line."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (FileNotFoundError, ValueError, RuntimeError, KeyError, OSError) as exc:
            click.echo(f"{type(exc).__name__}: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _preprocessed(data_dir: str, out: Path, target_hz: float = 128.0) -> Dataset:
    """Open a dataset, preprocessing (resample + band-pass) into a cached
    sibling dataset when the stored rate differs from the target."""
    ds = open_dataset(data_dir)
    if ds.manifest.rate_hz == target_hz:
        return ds
    cache = out / f"preprocessed_{ds.manifest.dataset_id}_{target_hz:g}hz"
    if (cache / "dataset.json").exists():
        return open_dataset(cache)
    recs = [sigproc.preprocess(ds.load_recording(rid), target_hz)
            for rid in ds.recording_ids]
    return ingest(recs, f"{ds.manifest.dataset_id}-pp{target_hz:g}", cache)


@click.group()
def main():
    """Label-efficient sleep staging with self-supervised pre-training."""


@main.command()
@click.option("--out", required=True, help="Output dataset directory.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML run-config file; flags override its keys.")
@click.option("--recordings", type=int, default=None, help="Number of recordings.")
@click.option("--epochs-per-recording", type=int, default=None)
@click.option("--seed", type=int, default=None)
@runtime_errors
def synth(out, config_path, recordings, epochs_per_recording, seed):
    """Generate a synthetic labeled two-channel EEG dataset."""
    cfg = _load_config(config_path)
    out = _out_dir(out)
    sc = SynthConfig(
        n_recordings=_opt(recordings, cfg, "recordings", 40),
        epochs_per_recording=_opt(epochs_per_recording, cfg, "epochs_per_recording", 960),
        seed=_opt(seed, cfg, "seed", 0),
    )
    ds = generate_synthetic(sc, out)
    click.echo(f"wrote {len(ds.recording_ids)} recordings to {out}")


def _net_config(cfg: dict, preset: str | None) -> NetConfig:
    name = preset or cfg.get("net", "default")
    if name not in NET_PRESETS:
        raise click.UsageError(f"unknown net preset {name!r}; choose from {sorted(NET_PRESETS)}")
    return NET_PRESETS[name]


@main.command("pretrain")
@click.option("--method", type=click.Choice(METHODS), default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None)
@click.option("--out", required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None, help="Override pretext training epochs.")
@click.option("--batch-size", type=int, default=None)
@click.option("--steps-per-epoch", type=int, default=None,
              help="Cap optimizer steps per training epoch (desk-scale runs).")
@click.option("--net", "net_preset", type=click.Choice(sorted(NET_PRESETS)), default=None)
@runtime_errors
def cmd_pretrain(method, data_dir, out, config_path, seed, epochs, batch_size,
                 steps_per_epoch, net_preset):
    """Self-supervised pre-training of the epoch encoder."""
    cfg = _load_config(config_path)
    method = _opt(method, cfg, "method", None)
    data_dir = _opt(data_dir, cfg, "data", None)
    if method is None or data_dir is None:
        raise click.UsageError("--method and --data are required (flag or config key)")
    seed = _opt(seed, cfg, "seed", 0)
    out = _out_dir(out)
    net_config = _net_config(cfg, net_preset)
    ds = _preprocessed(data_dir, out)
    hyper = default_hyperparams(method)
    hyper.epochs = _opt(epochs, cfg, "epochs", hyper.epochs)
    hyper.batch_size = _opt(batch_size, cfg, "batch_size", hyper.batch_size)
    steps = _opt(steps_per_epoch, cfg, "steps_per_epoch", None)

    pool = [(rid, pos) for rid in ds.recording_ids for pos, _ in ds.epoch_index(rid)]
    stats = fit_pool_norm(ds, pool)
    source = EpochSource(ds, pool, stats)
    state, log = pretrain(method, source, net_config, hyper, seed=seed,
                          max_steps_per_epoch=steps, log_path=out / "loss_log.jsonl")
    encoder = EpochEncoder(net_config)
    encoder.load_state_dict(state)
    ckpt = out / f"{method}_encoder.ckpt"
    save_checkpoint(ckpt, encoder, net_config,
                    metadata={"method": method, "seed": seed, "phase": "pretext"})
    report.plot_loss_curve(log, out / "loss_curve.png", f"{method} pretext loss")
    RunManifest(seed=seed, method=method,
                config={"epochs": hyper.epochs, "batch_size": hyper.batch_size,
                        "net": net_config.fingerprint()},
                dataset_id=ds.manifest.dataset_id,
                checkpoint=str(ckpt), log=log).write(out / "manifest.json")
    click.echo(f"checkpoint: {ckpt}")


def _split_ids(ids: list[str], test_fraction: float, seed: int):
    rng = np.random.default_rng([seed, 99])
    order = list(np.array(ids)[rng.permutation(len(ids))])
    n_test = max(1, int(round(test_fraction * len(ids))))
    test, rest = order[:n_test], order[n_test:]
    n_val = max(1, int(round(0.15 * len(rest))))
    return rest[n_val:], rest[:n_val], test


@main.command("finetune")
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None)
@click.option("--out", required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--init", "init_ckpt", type=click.Path(exists=True), default=None,
              help="Pre-trained epoch-encoder checkpoint; omit for the supervised baseline.")
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--test-fraction", type=float, default=None)
@click.option("--net", "net_preset", type=click.Choice(sorted(NET_PRESETS)), default=None)
@runtime_errors
def cmd_finetune(data_dir, out, config_path, init_ckpt, seed, epochs, batch_size,
                 test_fraction, net_preset):
    """Supervised fine-tuning and held-out evaluation."""
    cfg = _load_config(config_path)
    data_dir = _opt(data_dir, cfg, "data", None)
    if data_dir is None:
        raise click.UsageError("--data is required (flag or config key)")
    init_ckpt = _opt(init_ckpt, cfg, "init", None)
    seed = _opt(seed, cfg, "seed", 0)
    out = _out_dir(out)
    net_config = _net_config(cfg, net_preset)
    ds = _preprocessed(data_dir, out)
    ft = FinetuneConfig(
        epochs=_opt(epochs, cfg, "epochs", 100),
        batch_size=_opt(batch_size, cfg, "batch_size", 8),
    )
    train_ids, val_ids, test_ids = _split_ids(
        ds.recording_ids, _opt(test_fraction, cfg, "test_fraction", 0.2), seed)
    encoder_init = None
    if init_ckpt is not None:
        encoder = EpochEncoder(net_config)
        load_checkpoint(init_ckpt, encoder, net_config)
        encoder_init = encoder.state_dict()
    train_w = stream_windows(ds, net_config.window, train_ids)
    val_w = stream_windows(ds, net_config.window, val_ids)
    test_w = stream_windows(ds, net_config.window, test_ids)
    result = finetune(ds, train_w, val_w, net_config, encoder_init=encoder_init,
                      config=ft, seed=seed)
    metrics = evaluate(result.model, ds, test_w, result.stats)
    ckpt = out / "staging_model.ckpt"
    save_checkpoint(ckpt, result.model, net_config,
                    metadata={"seed": seed, "phase": "finetune",
                              "best_epoch": result.best_epoch})
    (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True))
    report.plot_confusion(metrics, out / "confusion.png")
    RunManifest(seed=seed, method="finetune",
                config={"epochs": ft.epochs, "batch_size": ft.batch_size,
                        "init": str(init_ckpt), "net": net_config.fingerprint()},
                dataset_id=ds.manifest.dataset_id, checkpoint=str(ckpt),
                log=[{"epoch": i, "val_accuracy": a}
                     for i, a in enumerate(result.val_trace)]).write(out / "manifest.json")
    click.echo(f"test accuracy: {metrics.accuracy:.4f}")


@main.command("evaluate")
@click.option("--scenario", type=click.Choice(["1", "2", "3"]), default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None)
@click.option("--pretrain-data", "pretrain_dir", type=click.Path(exists=True), default=None,
              help="External unlabeled dataset for scenarios 1 and 2.")
@click.option("--out", required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--methods", default=None, help="Comma-separated; 'supervised' plus SSL names.")
@click.option("--fractions", default=None,
              help="Comma-separated label percentages, e.g. 7.5,15,20,60,100.")
@click.option("--n", "n_reps", type=int, default=None)
@click.option("--m", "m_reps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--pretrain-epochs", type=int, default=None)
@click.option("--finetune-epochs", type=int, default=None)
@click.option("--steps-per-epoch", type=int, default=None)
@click.option("--net", "net_preset", type=click.Choice(sorted(NET_PRESETS)), default=None)
@runtime_errors
def cmd_evaluate(scenario, data_dir, pretrain_dir, out, config_path, methods,
                 fractions, n_reps, m_reps, seed, pretrain_epochs,
                 finetune_epochs, steps_per_epoch, net_preset):
    """Run one evaluation scenario and emit result tables and figures."""
    cfg = _load_config(config_path)
    scenario = int(_opt(scenario, cfg, "scenario", 0) or 0)
    data_dir = _opt(data_dir, cfg, "data", None)
    if scenario not in (1, 2, 3) or data_dir is None:
        raise click.UsageError("--scenario and --data are required (flag or config key)")
    pretrain_dir = _opt(pretrain_dir, cfg, "pretrain_data", None)
    methods = _opt(methods, cfg, "methods", "supervised,simclr")
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",")]
    for m in methods:
        if m != bench.SUPERVISED and m not in METHODS:
            raise click.UsageError(f"unknown method {m!r}")
    fractions = _opt(fractions, cfg, "fractions", "10,100")
    if isinstance(fractions, str):
        fractions = [float(f) for f in fractions.split(",")]
    fractions = [f / 100 for f in fractions]
    n_reps = _opt(n_reps, cfg, "n", 3)
    m_reps = _opt(m_reps, cfg, "m", 3)
    seed = _opt(seed, cfg, "seed", 0)
    out = _out_dir(out)
    net_config = _net_config(cfg, net_preset)
    ds = _preprocessed(data_dir, out)
    pre_ds = _preprocessed(pretrain_dir, out) if pretrain_dir else None
    needs_ssl = any(m != bench.SUPERVISED for m in methods)
    if scenario in (1, 2) and pre_ds is None and needs_ssl:
        raise click.UsageError("scenarios 1 and 2 need --pretrain-data for SSL methods")

    hyper_overrides = {}
    p_epochs = _opt(pretrain_epochs, cfg, "pretrain_epochs", None)
    for m in methods:
        if m == bench.SUPERVISED:
            continue
        h = default_hyperparams(m)
        if p_epochs is not None:
            h.epochs = p_epochs
        hyper_overrides[m] = h
    ft = FinetuneConfig(epochs=_opt(finetune_epochs, cfg, "finetune_epochs", 100))

    plans = []
    for frac in fractions:
        if scenario == 1:
            plans += bench.plan_scenario1(ds.recording_ids, frac, n_reps, seed)
        elif scenario == 2:
            plans += bench.plan_scenario2(ds.recording_ids, frac, n_reps, m_reps, seed)
        else:
            plans += bench.plan_scenario3(ds.recording_ids, 1 - frac, n_reps, seed)
    table = bench.run_scenario(
        ds, plans, methods, net_config, pretrain_dataset=pre_ds,
        hyper_overrides=hyper_overrides, finetune_config=ft,
        pretrain_steps_per_epoch=_opt(steps_per_epoch, cfg, "steps_per_epoch", None),
        seed=seed)
    (out / "results.json").write_text(json.dumps(table.to_dict(), indent=2, sort_keys=True))
    report.write_table_csv(table, out / "results.csv")
    (out / "results.txt").write_text(report.render_table_text(table))
    report.plot_label_efficiency(table, out / "label_efficiency.png")
    click.echo(report.render_table_text(table))


@main.command("embed")
@click.option("--checkpoint", "ckpt", type=click.Path(exists=True), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--out", required=True)
@click.option("--first-k", type=int, default=None, help="Only the first K recordings.")
@runtime_errors
def cmd_embed(ckpt, data_dir, out, first_k):
    """Export per-epoch encoder embeddings for external projection."""
    out = _out_dir(out)
    net_config = config_from_checkpoint(ckpt)
    encoder = EpochEncoder(net_config)
    header, arrays = read_checkpoint(ckpt)
    if any(name.startswith("epoch_encoder.") for name in arrays):
        # full staging-model checkpoint: take the encoder part
        state = {name.removeprefix("epoch_encoder."): torch.from_numpy(a)
                 for name, a in arrays.items() if name.startswith("epoch_encoder.")}
        encoder.load_state_dict(state)
    else:
        load_checkpoint(ckpt, encoder, net_config)
    ds = _preprocessed(data_dir, out)
    pool = [(rid, pos) for rid in ds.recording_ids for pos, _ in ds.epoch_index(rid)]
    stats = fit_pool_norm(ds, pool)
    rows = bench.export_embeddings(encoder, ds, stats, first_k=first_k)
    path = out / "embeddings.csv"
    bench.write_embeddings_csv(rows, path)
    click.echo(f"wrote {len(rows)} rows to {path}")


@main.command("augment-preview")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--set", "set_name", type=click.Choice(["T1", "T2"]), default="T1")
@click.option("--out", required=True)
@click.option("--seed", type=int, default=0)
@click.option("--epoch-index", type=int, default=0)
@runtime_errors
def cmd_augment_preview(data_dir, set_name, out, seed, epoch_index):
    """Render before/after CSV traces and a figure for one augmented epoch."""
    out = _out_dir(out)
    ds = _preprocessed(data_dir, out)
    rid = ds.recording_ids[0]
    index = ds.epoch_index(rid)
    pos, _ = index[epoch_index]
    from .datastore import epoch_array
    before = epoch_array(ds, rid, pos)
    rng = augment.AugSeed(seed).rng(epoch_index)
    after = augment.augment_epoch(before, set_name, rng, ds.manifest.rate_hz)
    header = ",".join(
        [f"before_ch{c}" for c in range(before.shape[0])]
        + [f"after_ch{c}" for c in range(before.shape[0])]
    )
    body = np.concatenate([before, after]).T
    lines = [header] + [",".join(f"{v:.6f}" for v in row) for row in body]
    (out / "augment_preview.csv").write_text("\n".join(lines) + "\n")
    report.plot_augment_preview(before, after, ds.manifest.rate_hz,
                                out / "augment_preview.png",
                                f"{set_name} on {rid} epoch {pos}")
    click.echo(f"wrote preview for {rid} epoch {pos} to {out}")


if __name__ == "__main__":
    main()
