import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from stationcast.cli import main
from stationcast.config import default_config, describe_defaults, validate_config
from stationcast.dataset import DatasetCatalog
from stationcast.errors import ConfigError
from stationcast.ingest import N_VARIABLES
from stationcast.synth import (encode_raw_archive, generate_catalog,
                               generate_dyncore_series, _station_metas)


class TestConfig:
    def test_fully_defaulted_config_is_valid(self):
        cfg = validate_config({})
        assert cfg == default_config()
        assert cfg["model"]["lookback"] == 48
        assert cfg["qc"]["completeness_threshold"] == 0.9

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            validate_config({"nonsense": {}})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            validate_config({"model": {"embde_dim": 3}})

    def test_override_merges(self):
        cfg = validate_config({"model": {"embed_dim": 32}})
        assert cfg["model"]["embed_dim"] == 32
        assert cfg["model"]["heads"] == 4

    def test_describe_lists_every_key(self):
        text = describe_defaults()
        for section, keys in ((s, k) for s, k in
                              ((s, list(ks)) for s, ks in
                               __import__("stationcast.config", fromlist=["SCHEMA"]).SCHEMA.items())):
            for key in keys:
                assert f"{section}.{key}" in text


class TestSynth:
    def test_sine_catalog_shapes(self, tmp_path):
        catalog = generate_catalog(tmp_path / "c", "sine", stations=2, hours=500, seed=0)
        assert len(catalog.stations) == 2
        assert catalog.length == 500
        values, masks = catalog.load_values()
        assert values.shape == (2, 500, N_VARIABLES)
        assert masks.all()
        assert np.isfinite(values).all()

    def test_catalog_deterministic_for_seed(self, tmp_path):
        a = generate_catalog(tmp_path / "a", "ar1", stations=2, hours=200, seed=5)
        b = generate_catalog(tmp_path / "b", "ar1", stations=2, hours=200, seed=5)
        va, _ = a.load_values()
        vb, _ = b.load_values()
        assert va.tobytes() == vb.tobytes()

    def test_dyncore_truth_vs_observed_noise(self, rng):
        metas = _station_metas(1, rng)
        observed, truth = generate_dyncore_series(metas[0],
                                                  __import__("stationcast.synth",
                                                             fromlist=["DEFAULT_START"]).DEFAULT_START,
                                                  600, rng)
        diff = observed.values - truth.values
        assert np.abs(diff).max() > 0.0
        assert np.abs(diff[:, 0]).std() < 2.0   # bounded observation noise

    def test_raw_archive_round_trips_through_ingest(self, tmp_path):
        catalog = generate_catalog(tmp_path / "c", "sine", stations=1, hours=60, seed=1)
        raw = tmp_path / "raw"
        encode_raw_archive(catalog, raw, jitter_minutes=0, missing_rate=0.0, seed=1)
        from stationcast.ingest import (load_station_manifest, open_archive_dir,
                                        scan_archive)
        metas = load_station_manifest(raw / "stations.json")
        streams, report = scan_archive(open_archive_dir(raw, metas))
        for meta, obs in streams:
            records = list(obs)
            assert len(records) == 60
        assert report.rejected == 0


def run_cli(args, **kw):
    return CliRunner(mix_stderr=False).invoke(main, args, **kw) if hasattr(CliRunner(), "mix_stderr") else CliRunner().invoke(main, args, **kw)


class TestCli:
    def _invoke(self, args):
        runner = CliRunner()
        return runner.invoke(main, args, catch_exceptions=False)

    def test_help_lists_config_keys(self):
        res = self._invoke(["--help"])
        assert res.exit_code == 0
        assert "model.embed_dim" in res.output
        assert "qc.completeness_threshold" in res.output

    def test_synth_qc_stats_train_predict_evaluate(self, tmp_path):
        out = str(tmp_path / "run")
        cfg = {
            "model": {"embed_dim": 16, "encoder_layers": 1, "decoder_layers": 1,
                      "heads": 2, "ff_dim": 32, "decoder_history": 8,
                      "lookback": 16, "horizon": 6, "k_geo": 4, "k_time": 4},
            "train": {"iterations": 30, "eval_every": 10, "val_batches": 2,
                      "batch": 4, "stride": 2},
            "eval": {"lead_buckets": [6], "stride": 4},
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))

        res = self._invoke(["--out-dir", out, "--config", str(cfg_path),
                            "synth", "--preset", "sine", "--stations", "2",
                            "--hours", "400"])
        assert res.exit_code == 0, res.output
        catalog_dir = os.path.join(out, "catalog")

        res = self._invoke(["--out-dir", out, "--config", str(cfg_path),
                            "qc", "--catalog", catalog_dir])
        assert res.exit_code == 0, res.output
        assert os.path.exists(os.path.join(out, "qc_report.json"))
        clean_dir = os.path.join(out, "clean")

        res = self._invoke(["--out-dir", out, "--config", str(cfg_path),
                            "stats", "--catalog", clean_dir])
        assert res.exit_code == 0, res.output
        stats_path = os.path.join(out, "stats.json")
        assert os.path.exists(stats_path)

        res = self._invoke(["--out-dir", out, "--config", str(cfg_path),
                            "train", "--catalog", clean_dir,
                            "--stats-file", stats_path])
        assert res.exit_code == 0, res.output
        ckpt = os.path.join(out, "model.ckpt")
        assert os.path.exists(ckpt)
        assert os.path.exists(os.path.join(out, "loss_curve.csv"))

        res = self._invoke(["--out-dir", out, "--config", str(cfg_path),
                            "predict", "--catalog", clean_dir,
                            "--checkpoint", ckpt, "--split", "test",
                            "--stats-file", stats_path])
        assert res.exit_code == 0, res.output
        forecasts = os.path.join(out, "forecasts.csv")
        assert os.path.exists(forecasts)

        res = self._invoke(["--out-dir", out, "--config", str(cfg_path),
                            "evaluate", "--forecasts", forecasts,
                            "--stats-file", stats_path, "--checkpoint", ckpt,
                            "--paper-table"])
        assert res.exit_code == 0, res.output
        assert os.path.exists(os.path.join(out, "report.csv"))
        assert os.path.exists(os.path.join(out, "report.csv.txt"))

        res = self._invoke(["--out-dir", out, "--config", str(cfg_path),
                            "plot", "--loss-curve",
                            os.path.join(out, "loss_curve.csv"),
                            "--forecasts", forecasts])
        assert res.exit_code == 0, res.output
        assert os.path.exists(os.path.join(out, "loss_curve.svg"))

    def test_ingest_pipeline_from_raw(self, tmp_path):
        out = str(tmp_path / "run")
        res = self._invoke(["--out-dir", out, "synth", "--preset", "sine",
                            "--stations", "2", "--hours", "120", "--raw"])
        assert res.exit_code == 0, res.output
        res = self._invoke(["--out-dir", out, "ingest", "--raw-dir",
                            os.path.join(out, "raw")])
        assert res.exit_code == 0, res.output
        ingested = DatasetCatalog.load(os.path.join(out, "ingested"))
        assert len(ingested.stations) == 2
        assert os.path.exists(os.path.join(out, "scan_report.json"))

    def test_rejected_station_is_not_an_error(self, tmp_path):
        # 50% coverage station: qc must exit 0 and report the rejection
        from stationcast.synth import generate_sine_series
        from stationcast.dataset import save_catalog
        import numpy as np
        from stationcast.ingest import StationMeta
        rng = np.random.Generator(np.random.PCG64(0))
        metas = [StationMeta("GOOD01", 10.0, 10.0), StationMeta("BAD001", 0.0, 0.0)]
        from stationcast.synth import DEFAULT_START
        good = generate_sine_series(metas[0], DEFAULT_START, 200, rng)
        bad = generate_sine_series(metas[1], DEFAULT_START, 200, rng)
        bad.values[:100] = np.nan
        bad.mask[:100] = False
        save_catalog(tmp_path / "cat", [good, bad])
        out = str(tmp_path / "run")
        res = self._invoke(["--out-dir", out, "qc", "--catalog", str(tmp_path / "cat")])
        assert res.exit_code == 0, res.output
        doc = json.loads(open(os.path.join(out, "qc_report.json")).read())
        assert doc["accepted"] == 1 and doc["rejected"] == 1

    def test_data_error_exits_one_with_json(self, tmp_path):
        out = str(tmp_path / "run")
        runner = CliRunner()
        res = runner.invoke(main, ["--out-dir", out, "qc", "--catalog",
                                   str(tmp_path / "missing")])
        assert res.exit_code == 1
        err_text = getattr(res, "stderr", "") or res.output
        payload = json.loads(err_text.strip().splitlines()[-1])
        assert payload["error"] in ("IoFailure", "ValueParse")

    def test_usage_error_exits_two(self):
        runner = CliRunner()
        res = runner.invoke(main, ["predict"])   # missing required --catalog
        assert res.exit_code == 2

    def test_evaluate_shape_mismatch_is_data_error(self, tmp_path):
        bad = tmp_path / "f.csv"
        bad.write_text("# schema=1 samples=1 stations=1 horizon=2 variables=TMP\n"
                       "sample,station_id,lead_hour,variable,prediction,target\n"
                       "0,AAA,1,TMP,1.0,1.0\n")
        out = str(tmp_path / "run")
        runner = CliRunner()
        res = runner.invoke(main, ["--out-dir", out, "evaluate",
                                   "--forecasts", str(bad)])
        assert res.exit_code == 1

    def test_rerun_is_byte_identical(self, tmp_path):
        def run(tag):
            out = str(tmp_path / tag)
            r = self._invoke(["--out-dir", out, "--seed", "3", "synth",
                              "--preset", "ar1", "--stations", "2",
                              "--hours", "150"])
            assert r.exit_code == 0
            files = {}
            for root, _, names in os.walk(out):
                for n in names:
                    p = os.path.join(root, n)
                    files[os.path.relpath(p, out)] = open(p, "rb").read()
            return files

        a, b = run("a"), run("b")
        assert a.keys() == b.keys()
        for k in a:
            assert a[k] == b[k], f"artifact {k} differs between runs"
