"""Surface-station weather toolkit: ingest, QC, physics-guided forecasting,
and operational verification."""

from .autodiff import Adam, Parameter, Tensor, cosine_lr, layer_norm, softmax
from .dataset import (ClimateStats, DatasetCatalog, SplitRanges, WindowBatch,
                      chronological_split, compute_stats, destandardize,
                      make_windows, read_station_csv, standardize,
                      write_station_csv)
from .dynamics import DynamicCoreParams, fit_params, integrate
from .ingest import (DEFAULT_SCHEMA, RawObservation, ScanReport, StationMeta,
                     Variable, VariableCodec, decode_field, encode_field,
                     parse_record_line, scan_archive)
from .metrics import (ForecastSet, MetricReport, complexity_report,
                      evaluate_forecasts, mae_mse, read_forecast_file, sedi,
                      write_forecast_file, write_report)
from .model import (ForecastOutput, ModelConfig, PhysicsFormer, TrainConfig,
                    train_model)
from .qc import (Climatology, OutlierPolicy, QcConfig, QcReport, StationSeries,
                 align_to_hours, completeness_filter, fill_long_gaps,
                 flag_outliers, interpolate_short_gaps, run_pipeline)

__version__ = "0.1.0"
