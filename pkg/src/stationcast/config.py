"""Run configuration: one JSON document, every key defaulted and documented.

Unknown keys are rejected so typos fail loudly.  The fully-defaulted
configuration is valid; ``describe_defaults()`` feeds the CLI help text.
"""

from __future__ import annotations

import json
from typing import Any

from .errors import ConfigError

#: (default, description) per key, by section
SCHEMA: dict[str, dict[str, tuple[Any, str]]] = {
    "ingest": {
        "raw_dir": (None, "directory of raw record text files plus stations.json"),
        "quality_accept": ([0, 1, 4, 5], "quality codes kept; others become missing"),
        "schema": (None, "codec table override (list of codec objects); null = built-in five-variable schema"),
    },
    "qc": {
        "window_minutes": (30, "alignment window around each grid hour, minutes"),
        "max_gap_hours": (12, "longest interior gap filled by linear interpolation"),
        "completeness_threshold": (0.9, "minimum observed fraction, strict inequality"),
        "outlier_k": (8.0, "MAD multiplier for the rolling outlier screen"),
        "outlier_window_hours": (24, "rolling window width for the outlier screen"),
        "gap_filler": ("climatology", "gap filler: 'climatology' or 'table'"),
        "gap_fill_table_dir": (None, "directory of station CSVs supplying gap values for the 'table' filler"),
    },
    "dataset": {
        "split_mode": ("ratio", "'ratio' (80/10/10 hours) or 'calendar' (whole years 8:1:1)"),
        "stats_preset": (None, "named standardization preset; null = compute from the training split"),
    },
    "model": {
        "embed_dim": (64, "token width D"),
        "encoder_layers": (2, "encoder depth"),
        "decoder_layers": (2, "decoder depth"),
        "heads": (4, "attention heads (must divide embed_dim)"),
        "ff_dim": (128, "feed-forward hidden width"),
        "decoder_history": (24, "trailing lookback steps fed to the decoder"),
        "k_geo": (8, "Fourier bands for longitude/latitude"),
        "k_time": (8, "Fourier bands for averaged time markers"),
        "lookback": (48, "input window length T, hours"),
        "horizon": (24, "forecast length tau, hours"),
        "lambda_pw": (0.1, "weight of the pressure-wind alignment penalty"),
        "lambda_smooth": (0.01, "weight of the second-difference smoothness penalty"),
        "dropout": (0.0, "dropout rate inside encoder/decoder blocks"),
        "seed": (0, "parameter-init and dropout seed"),
    },
    "train": {
        "iterations": (2000, "optimizer steps"),
        "base_lr": (1e-4, "initial Adam learning rate (cosine-decayed to 0)"),
        "seed": (0, "batch shuffling seed"),
        "batch": (8, "windows per batch"),
        "stride": (1, "hours between consecutive window starts"),
        "eval_every": (100, "iterations between validation evaluations"),
        "patience": (3, "consecutive non-improving evaluations before stopping"),
        "val_batches": (4, "validation batches per evaluation"),
    },
    "eval": {
        "percentile_levels": ([90.0, 95.0, 98.0, 99.5], "upper extreme levels (lower tails are paired automatically)"),
        "wind_angle_mode": ("circular", "'circular' (shortest arc) or 'plain' wind-direction error"),
        "lead_buckets": ([24, 72, 120, 168], "right edges of the lead-hour buckets"),
        "stride": (24, "hours between evaluated forecast starts"),
    },
}


def default_config() -> dict:
    cfg = {"schema_version": 1}
    for section, keys in SCHEMA.items():
        cfg[section] = {k: v for k, (v, _) in keys.items()}
    return cfg


def validate_config(doc: dict) -> dict:
    """Merge ``doc`` over the defaults, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    cfg = default_config()
    for key, value in doc.items():
        if key == "schema_version":
            if value != 1:
                raise ConfigError(f"unsupported schema_version {value}")
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"section {key!r} must be an object")
        for sub, sub_value in value.items():
            if sub not in SCHEMA[key]:
                raise ConfigError(f"unknown config key {key}.{sub}")
            cfg[key][sub] = sub_value
    return cfg


def load_config(path: str | None) -> dict:
    if path is None:
        return default_config()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad JSON in {path}: {exc}")
    return validate_config(doc)


def describe_defaults() -> str:
    lines = ["Config keys (JSON, section.key = default):", "  schema_version = 1"]
    for section, keys in SCHEMA.items():
        for k, (default, desc) in keys.items():
            lines.append(f"  {section}.{k} = {json.dumps(default)}  -- {desc}")
    return "\n".join(lines)
