"""Command-line entry point wiring the pipeline end to end.

Exit codes: 0 on success, 1 on data errors (machine-readable JSON on
stderr), 2 on usage errors.  All artifact formats are defined by the
library modules; re-running a subcommand with identical config and inputs
reproduces identical bytes (wall-clock timing goes to a separate file).
"""

from __future__ import annotations

import functools
import json
import os
import sys

import click
import numpy as np

from . import baselines as bl
from . import metrics as mx
from . import synth as sy
from .config import default_config, describe_defaults, load_config
from .dataset import (ClimateStats, DatasetCatalog, STATS_PRESETS,
                      chronological_split, compute_stats, destandardize,
                      make_windows, save_catalog)
from .dynamics import fit_params
from .errors import ConfigError, StationcastError
from .ingest import (load_station_manifest, open_archive_dir, scan_archive,
                     schema_from_config)
from .model import ModelConfig, PhysicsFormer, TrainConfig, train_model
from .qc import (Climatology, OutlierPolicy, QcConfig, StationSeries,
                 TableFiller, align_to_hours, from_epoch_hours, map_stations,
                 run_pipeline, to_epoch_hours)


def _fail(err: StationcastError) -> None:
    sys.stderr.write(json.dumps(err.to_json_dict()) + "\n")
    sys.exit(1)


def data_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StationcastError as err:
            _fail(err)
    return wrapper


@click.group(epilog=describe_defaults())
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="run configuration JSON (defaults apply when omitted)")
@click.option("--seed", type=int, default=None, help="override every configured seed")
@click.option("--out-dir", type=click.Path(), default="out", show_default=True,
              help="directory for artifacts")
@click.pass_context
def main(ctx, config_path, seed, out_dir):
    """Station-series forecasting toolkit: data pipeline, training, evaluation."""
    try:
        cfg = load_config(config_path)
    except ConfigError as err:
        _fail(err)
    if seed is not None:
        cfg["model"]["seed"] = seed
        cfg["train"]["seed"] = seed
    os.makedirs(out_dir, exist_ok=True)
    ctx.obj = {"cfg": cfg, "out_dir": out_dir, "seed": seed}


@main.command()
@click.option("--preset", type=click.Choice(sy.PRESETS), default="sine", show_default=True)
@click.option("--stations", type=int, default=2, show_default=True)
@click.option("--hours", type=int, default=500, show_default=True)
@click.option("--raw", is_flag=True, help="also emit a raw record archive for ingest")
@click.pass_obj
@data_errors
def synth(obj, preset, stations, hours, raw):
    """Generate a synthetic catalog (and optionally a raw archive)."""
    seed = obj["seed"] if obj["seed"] is not None else 0
    root = os.path.join(obj["out_dir"], "catalog")
    catalog = sy.generate_catalog(root, preset, stations, hours, seed=seed)
    click.echo(f"wrote {len(catalog.stations)} stations x {catalog.length} hours to {root}")
    if raw:
        raw_dir = os.path.join(obj["out_dir"], "raw")
        sy.encode_raw_archive(catalog, raw_dir, seed=seed)
        click.echo(f"wrote raw archive to {raw_dir}")


@main.command()
@click.option("--raw-dir", type=click.Path(), default=None,
              help="raw archive directory (default: config ingest.raw_dir)")
@click.pass_obj
@data_errors
def ingest(obj, raw_dir):
    """Decode a raw archive and align it onto the hourly grid."""
    cfg = obj["cfg"]
    raw_dir = raw_dir or cfg["ingest"]["raw_dir"]
    if raw_dir is None:
        raise ConfigError("no raw directory given (flag --raw-dir or ingest.raw_dir)")
    schema = schema_from_config(cfg["ingest"]["schema"])
    accept = frozenset(int(q) for q in cfg["ingest"]["quality_accept"])
    metas = load_station_manifest(os.path.join(raw_dir, "stations.json"))
    streams, report = scan_archive(open_archive_dir(raw_dir, metas), schema, accept)
    station_obs = [(meta, list(obs)) for meta, obs in streams]
    minutes = [int((ts - from_epoch_hours(0)).total_seconds() // 60)
               for _, obs in station_obs for ts, _ in obs]
    if not minutes:
        raise ConfigError("archive contains no decodable observations")
    first_hour = (min(minutes) + 30) // 60
    last_hour = (max(minutes) + 30) // 60
    length = last_hour - first_hour + 1
    start = from_epoch_hours(first_hour)
    window = int(cfg["qc"]["window_minutes"])
    series = [align_to_hours(meta, obs, start, length, window)
              for meta, obs in station_obs]
    root = os.path.join(obj["out_dir"], "ingested")
    save_catalog(root, series)
    with open(os.path.join(obj["out_dir"], "scan_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    click.echo(f"ingested {len(series)} stations x {length} hours to {root} "
               f"({report.rejected} lines rejected)")


def _qc_filler(cfg, catalog):
    if cfg["qc"]["gap_filler"] == "table":
        table_dir = cfg["qc"]["gap_fill_table_dir"]
        if table_dir is None:
            raise ConfigError("qc.gap_filler = 'table' needs qc.gap_fill_table_dir")
        from .dataset import read_station_csv

        def make(station_id):
            s = read_station_csv(os.path.join(table_dir, f"{station_id}.csv"), station_id)
            hours = s.hour_index()
            return TableFiller({int(h): s.values[i] for i, h in enumerate(hours)})
        return make
    return lambda station_id: None


@main.command()
@click.option("--catalog", "catalog_dir", type=click.Path(), required=True,
              help="catalog to clean (e.g. the ingest output)")
@click.pass_obj
@data_errors
def qc(obj, catalog_dir):
    """Run completeness, outlier, interpolation, and gap-fill stages."""
    cfg = obj["cfg"]
    catalog = DatasetCatalog.load(catalog_dir)
    qc_config = QcConfig(
        window_minutes=int(cfg["qc"]["window_minutes"]),
        max_gap_hours=int(cfg["qc"]["max_gap_hours"]),
        completeness_threshold=float(cfg["qc"]["completeness_threshold"]),
        outlier_policy=OutlierPolicy(k=float(cfg["qc"]["outlier_k"]),
                                     window_hours=int(cfg["qc"]["outlier_window_hours"])))
    filler_for = _qc_filler(cfg, catalog)

    def clean(meta):
        series = catalog.read_station(meta.station_id)
        return run_pipeline(series, qc_config, filler_for(meta.station_id))

    results = map_stations(clean, catalog.stations)
    kept = [s for s, rep in results if rep.accepted]
    reports = [rep for _, rep in results]
    root = os.path.join(obj["out_dir"], "clean")
    if kept:
        save_catalog(root, kept)
    with open(os.path.join(obj["out_dir"], "qc_report.json"), "w", encoding="utf-8") as fh:
        json.dump({"stations": [r.to_json_dict() for r in reports],
                   "accepted": sum(r.accepted for r in reports),
                   "rejected": sum(not r.accepted for r in reports)},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")
    click.echo(f"accepted {len(kept)}/{len(reports)} stations -> {root}")


def _resolve_stats(cfg, catalog, splits, stats_path=None):
    preset = cfg["dataset"]["stats_preset"]
    if preset is not None:
        if preset not in STATS_PRESETS:
            raise ConfigError(f"unknown stats preset {preset!r}")
        base = STATS_PRESETS[preset]
        computed = compute_stats(catalog, splits.train)
        return ClimateStats(mean=base.mean, std=base.std,
                            lower=computed.lower, upper=computed.upper)
    if stats_path and os.path.exists(stats_path):
        return ClimateStats.load(stats_path)
    return compute_stats(catalog, splits.train)


@main.command()
@click.option("--catalog", "catalog_dir", type=click.Path(), required=True)
@click.pass_obj
@data_errors
def stats(obj, catalog_dir):
    """Training-split statistics and extreme thresholds -> stats.json."""
    cfg = obj["cfg"]
    catalog = DatasetCatalog.load(catalog_dir)
    splits = chronological_split(catalog, cfg["dataset"]["split_mode"])
    s = _resolve_stats(cfg, catalog, splits)
    path = os.path.join(obj["out_dir"], "stats.json")
    s.save(path)
    click.echo(f"wrote {path}")


def _train_climatologies(catalog, splits):
    clims = []
    for meta in catalog.stations:
        s = catalog.read_station(meta.station_id)
        a, b = splits.train
        train_view = StationSeries(meta=s.meta, start=from_epoch_hours(s.start_epoch_hour + a),
                                   values=s.values[a:b], mask=s.mask[a:b],
                                   time_diff=s.time_diff[a:b])
        clims.append(Climatology.from_series(train_view))
    return clims


@main.command()
@click.option("--catalog", "catalog_dir", type=click.Path(), required=True)
@click.option("--stats-file", type=click.Path(), default=None,
              help="stats.json from the stats subcommand (recomputed when absent)")
@click.pass_obj
@data_errors
def train(obj, catalog_dir, stats_file):
    """Fit the dynamic core and train the forecaster."""
    cfg = obj["cfg"]
    catalog = DatasetCatalog.load(catalog_dir)
    splits = chronological_split(catalog, cfg["dataset"]["split_mode"])
    climate = _resolve_stats(cfg, catalog, splits, stats_file)
    series_list = [catalog.read_station(m.station_id) for m in catalog.stations]
    clims = _train_climatologies(catalog, splits)
    core = fit_params(series_list, splits.train, clims)
    model_cfg = ModelConfig(**{k: cfg["model"][k] for k in (
        "embed_dim", "encoder_layers", "decoder_layers", "heads", "ff_dim",
        "decoder_history", "k_geo", "k_time", "lookback", "horizon",
        "lambda_pw", "lambda_smooth", "dropout", "seed")})
    model = PhysicsFormer(model_cfg, core, clims, climate,
                          [m.station_id for m in catalog.stations])
    tcfg = TrainConfig(
        iterations=int(cfg["train"]["iterations"]),
        base_lr=float(cfg["train"]["base_lr"]),
        seed=int(cfg["train"]["seed"]),
        batch=int(cfg["train"]["batch"]),
        stride=int(cfg["train"]["stride"]),
        eval_every=int(cfg["train"]["eval_every"]),
        patience=int(cfg["train"]["patience"]),
        val_batches=int(cfg["train"]["val_batches"]),
        checkpoint_path=os.path.join(obj["out_dir"], "model.ckpt"))
    result = train_model(model, catalog, splits, climate, tcfg)
    result.write_curve(os.path.join(obj["out_dir"], "loss_curve.csv"))
    with open(os.path.join(obj["out_dir"], "timing.json"), "w", encoding="utf-8") as fh:
        json.dump({"train_seconds": result.train_seconds,
                   "iterations_run": result.iterations_run,
                   "stopped_early": result.stopped_early}, fh, indent=1)
        fh.write("\n")
    click.echo(f"trained {result.iterations_run} iterations, "
               f"best validation loss {result.best_val_loss:.6f}")


def _forecast_windows(catalog, splits, split_name, climate, lookback, horizon, stride):
    rng = splits.range_of(split_name)
    return make_windows(catalog, rng, climate, lookback=lookback, horizon=horizon,
                        stride=stride, batch=8, shuffle=False)


@main.command()
@click.option("--catalog", "catalog_dir", type=click.Path(), required=True)
@click.option("--checkpoint", type=click.Path(), default=None,
              help="trained model checkpoint; mutually exclusive with --baseline")
@click.option("--baseline", type=click.Choice(["persistence", "climatology", "linear"]),
              default=None)
@click.option("--split", "split_name", type=click.Choice(["train", "val", "test"]),
              default="test", show_default=True)
@click.option("--stats-file", type=click.Path(), default=None)
@click.pass_obj
@data_errors
def predict(obj, catalog_dir, checkpoint, baseline, split_name, stats_file):
    """Produce forecasts for one split and write the forecast file."""
    cfg = obj["cfg"]
    if (checkpoint is None) == (baseline is None):
        raise ConfigError("give exactly one of --checkpoint or --baseline")
    catalog = DatasetCatalog.load(catalog_dir)
    splits = chronological_split(catalog, cfg["dataset"]["split_mode"])
    climate = _resolve_stats(cfg, catalog, splits, stats_file)
    stride = int(cfg["eval"]["stride"])
    horizon = int(cfg["model"]["horizon"])
    lookback = int(cfg["model"]["lookback"])
    model = None
    if checkpoint is not None:
        model = PhysicsFormer.load(checkpoint)
        horizon = model.config.horizon
        lookback = model.config.lookback
        climate = model.stats
    preds, targs = [], []
    lin_weights = None
    clims = None
    if baseline == "linear":
        fit_batches = list(_forecast_windows(catalog, splits, "train", climate,
                                             lookback, horizon, stride))
        lin_weights = bl.linear_direct_fit(fit_batches, lookback, horizon)
    if baseline == "climatology":
        clims = _train_climatologies(catalog, splits)
    for batch in _forecast_windows(catalog, splits, split_name, climate,
                                   lookback, horizon, stride):
        if model is not None:
            out = model.forecast(batch)
            z = out.prediction.data
        elif baseline == "persistence":
            z = bl.persistence_forecast(batch)
        elif baseline == "climatology":
            z = bl.climatology_forecast(batch, clims, climate)
        else:
            z = bl.linear_direct_forecast(batch, lin_weights)
        preds.append(destandardize(z, climate))
        targs.append(destandardize(batch.targets, climate))
    fs = mx.ForecastSet(predictions=np.concatenate(preds),
                        targets=np.concatenate(targs),
                        station_ids=[m.station_id for m in catalog.stations])
    path = os.path.join(obj["out_dir"], "forecasts.csv")
    mx.write_forecast_file(fs, path)
    click.echo(f"wrote {fs.predictions.shape[0]} forecast windows to {path}")


@main.command()
@click.option("--forecasts", "forecast_path", type=click.Path(), required=True)
@click.option("--stats-file", type=click.Path(), default=None,
              help="stats.json with percentile thresholds (enables the extremes table)")
@click.option("--checkpoint", type=click.Path(), default=None,
              help="include this model's parameter count in the report")
@click.option("--paper-table", is_flag=True,
              help="also render the human-readable table layout")
@click.pass_obj
@data_errors
def evaluate(obj, forecast_path, stats_file, checkpoint, paper_table):
    """Compute MAE/MSE per lead bucket (and SEDI when thresholds are given)."""
    cfg = obj["cfg"]
    fs = mx.read_forecast_file(forecast_path)
    climate = ClimateStats.load(stats_file) if stats_file else None
    report = mx.evaluate_forecasts(
        fs, climate,
        bucket_edges=[int(x) for x in cfg["eval"]["lead_buckets"]],
        levels=[float(x) for x in cfg["eval"]["percentile_levels"]],
        wind_angle_mode=cfg["eval"]["wind_angle_mode"])
    if checkpoint:
        model = PhysicsFormer.load(checkpoint)
        comp = mx.complexity_report(model)
        report.parameter_count = comp["parameter_count"]
        report.peak_memory_bytes = comp["peak_memory_bytes"]
    path = os.path.join(obj["out_dir"], "report.csv")
    mx.write_report(report, path, paper_table=paper_table)
    click.echo(report.table())
    click.echo(f"wrote {path}")


@main.command()
@click.option("--loss-curve", "curve_path", type=click.Path(), default=None)
@click.option("--forecasts", "forecast_path", type=click.Path(), default=None)
@click.option("--station", "station_id", default=None)
@click.option("--variable", default="TMP", show_default=True)
@click.option("--sample", type=int, default=0, show_default=True)
@click.pass_obj
@data_errors
def plot(obj, curve_path, forecast_path, station_id, variable, sample):
    """Render SVG charts from trainer or forecast artifacts."""
    from . import plots as pl
    made = False
    if curve_path:
        out = os.path.join(obj["out_dir"], "loss_curve.svg")
        pl.plot_loss_curve(curve_path, out)
        click.echo(f"wrote {out}")
        made = True
    if forecast_path:
        fs = mx.read_forecast_file(forecast_path)
        sid = station_id or fs.station_ids[0]
        if sid not in fs.station_ids:
            raise ConfigError(f"station {sid} not in forecast file")
        if variable not in fs.variables:
            raise ConfigError(f"variable {variable} not in forecast file")
        s = fs.station_ids.index(sid)
        j = fs.variables.index(variable)
        out = os.path.join(obj["out_dir"], f"forecast_{sid}_{variable}.svg")
        pl.plot_forecast(fs.lead_hours, fs.targets[sample, s, :, j],
                         fs.predictions[sample, s, :, j], variable, sid, out)
        click.echo(f"wrote {out}")
        made = True
    if not made:
        raise click.UsageError("give --loss-curve and/or --forecasts")


if __name__ == "__main__":
    main()
