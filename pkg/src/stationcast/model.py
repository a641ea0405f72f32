"""Physics-guided station forecaster.

The network embeds each station's history, geography, and window timing
into one token, runs a Transformer encoder over the station axis (tokens =
stations, so attention mixes information globally across the network),
decodes against the recent history, and projects a residual correction on
top of the dynamic-core forecast.  Training minimizes data error plus two
weak physics penalties: pressure/wind tendency alignment with a learnable
coupling scalar, and second-difference smoothness of temperature and wind.

All model math runs in standardized units; the dynamic core is integrated
in standardized coordinates (exactly equivalent to physical integration,
see :mod:`stationcast.dynamics`) and enters the forecast as a constant, so
no gradient flows through the integrator.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import (Adam, Parameter, Tensor, layer_norm, load_checkpoint,
                       parameter_count, save_checkpoint)
from .dataset import (ClimateStats, DatasetCatalog, SplitRanges, WindowBatch,
                      make_windows, window_count)
from .dynamics import (DynamicCoreParams, IDX_P, IDX_RATE, IDX_T, integrate,
                       standardized_core_inputs)
from .errors import NaNLoss, ShapeMismatch
from .ingest import N_VARIABLES
from .qc import Climatology

#: scale periods for the (month, day, weekday, hour) markers
MARKER_PERIODS = np.array([12.0, 31.0, 7.0, 24.0])
MARKER_BASE = np.array([1.0, 1.0, 0.0, 0.0])


@dataclass
class ModelConfig:
    embed_dim: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    ff_dim: int = 128
    decoder_history: int = 24      # L, trailing steps fed to the decoder
    k_geo: int = 8                 # Fourier bands for (lon, lat)
    k_time: int = 8                # Fourier bands for averaged time markers
    lookback: int = 48
    horizon: int = 24
    n_variables: int = N_VARIABLES
    lambda_pw: float = 0.1
    lambda_smooth: float = 0.01
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ShapeMismatch(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.decoder_history > self.lookback:
            raise ShapeMismatch("decoder_history must be <= lookback")
        for name in ("embed_dim", "encoder_layers", "decoder_layers", "heads",
                     "ff_dim", "decoder_history", "k_geo", "k_time", "lookback", "horizon"):
            if getattr(self, name) < 1:
                raise ShapeMismatch(f"{name} must be >= 1")

    def to_json_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


def fourier_features(angles: np.ndarray, bands: int) -> np.ndarray:
    """[sin(2^j u), cos(2^j u)] for j = 0..bands-1, per trailing coordinate.

    Output shape is ``angles.shape[:-1] + (angles.shape[-1] * 2 * bands,)``.
    Inputs are angles in radians; coordinates differing by full turns give
    identical features up to rounding.
    """
    freqs = 2.0 ** np.arange(bands)
    u = angles[..., :, None] * freqs            # (..., C, bands)
    feats = np.concatenate([np.sin(u), np.cos(u)], axis=-1)
    return feats.reshape(angles.shape[:-1] + (-1,))


def marker_angles(markers: np.ndarray) -> np.ndarray:
    """Scale (month, day, weekday, hour) markers to [0, 2pi) by their periods."""
    return 2.0 * math.pi * ((markers - MARKER_BASE) / MARKER_PERIODS)


@dataclass
class LossComponents:
    total: float
    data: float
    pw: float
    smooth: float
    pw_enabled: bool
    smooth_enabled: bool


@dataclass
class ForecastOutput:
    prediction: Tensor          # (B, N, tau, V) standardized
    physical_core: np.ndarray   # X^phys, standardized, constant
    residual: Tensor            # Proj output, same shape


class _Mlp:
    """Two-layer GELU MLP used by every embedding head."""

    def __init__(self, prefix: str, d_in: int, d_out: int, init):
        self.w1 = Parameter(f"{prefix}.w1", Tensor(init((d_in, d_out)), requires_grad=True))
        self.b1 = Parameter(f"{prefix}.b1", Tensor(np.zeros(d_out), requires_grad=True))
        self.w2 = Parameter(f"{prefix}.w2", Tensor(init((d_out, d_out)), requires_grad=True))
        self.b2 = Parameter(f"{prefix}.b2", Tensor(np.zeros(d_out), requires_grad=True))

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, x: Tensor) -> Tensor:
        h = x.matmul(self.w1.tensor).add(self.b1.tensor).gelu()
        return h.matmul(self.w2.tensor).add(self.b2.tensor)


class _Attention:
    def __init__(self, prefix: str, dim: int, heads: int, init):
        self.dim, self.heads = dim, heads
        self.head_dim = dim // heads
        mk = lambda n: Parameter(f"{prefix}.{n}", Tensor(init((dim, dim)), requires_grad=True))
        bk = lambda n: Parameter(f"{prefix}.{n}", Tensor(np.zeros(dim), requires_grad=True))
        self.wq, self.wk, self.wv, self.wo = mk("wq"), mk("wk"), mk("wv"), mk("wo")
        self.bq, self.bk, self.bv, self.bo = bk("bq"), bk("bk"), bk("bv"), bk("bo")

    def params(self):
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo]

    def _split(self, x: Tensor, b: int, n: int) -> Tensor:
        return x.reshape(b, n, self.heads, self.head_dim).transpose((0, 2, 1, 3))

    def __call__(self, query_src: Tensor, kv_src: Tensor) -> Tensor:
        b, n, _ = query_src.shape
        m = kv_src.shape[1]
        q = self._split(query_src.matmul(self.wq.tensor).add(self.bq.tensor), b, n)
        k = self._split(kv_src.matmul(self.wk.tensor).add(self.bk.tensor), b, m)
        v = self._split(kv_src.matmul(self.wv.tensor).add(self.bv.tensor), b, m)
        scores = q.matmul(k.transpose((0, 1, 3, 2))).scalar_mul(1.0 / math.sqrt(self.head_dim))
        attn = scores.softmax(axis=-1)
        mixed = attn.matmul(v).transpose((0, 2, 1, 3)).reshape(b, n, self.dim)
        return mixed.matmul(self.wo.tensor).add(self.bo.tensor)


class _LayerNormParams:
    def __init__(self, prefix: str, dim: int):
        self.gain = Parameter(f"{prefix}.gain", Tensor(np.ones(dim), requires_grad=True))
        self.bias = Parameter(f"{prefix}.bias", Tensor(np.zeros(dim), requires_grad=True))

    def params(self):
        return [self.gain, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain.tensor, self.bias.tensor, axis=-1)


class _Ffn:
    def __init__(self, prefix: str, dim: int, hidden: int, init):
        self.w1 = Parameter(f"{prefix}.w1", Tensor(init((dim, hidden)), requires_grad=True))
        self.b1 = Parameter(f"{prefix}.b1", Tensor(np.zeros(hidden), requires_grad=True))
        self.w2 = Parameter(f"{prefix}.w2", Tensor(init((hidden, dim)), requires_grad=True))
        self.b2 = Parameter(f"{prefix}.b2", Tensor(np.zeros(dim), requires_grad=True))

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, x: Tensor) -> Tensor:
        return x.matmul(self.w1.tensor).add(self.b1.tensor).gelu() \
                .matmul(self.w2.tensor).add(self.b2.tensor)


class _EncoderLayer:
    def __init__(self, prefix: str, cfg: ModelConfig, init):
        self.ln1 = _LayerNormParams(f"{prefix}.ln1", cfg.embed_dim)
        self.attn = _Attention(f"{prefix}.attn", cfg.embed_dim, cfg.heads, init)
        self.ln2 = _LayerNormParams(f"{prefix}.ln2", cfg.embed_dim)
        self.ffn = _Ffn(f"{prefix}.ffn", cfg.embed_dim, cfg.ff_dim, init)

    def params(self):
        return self.ln1.params() + self.attn.params() + self.ln2.params() + self.ffn.params()

    def __call__(self, x: Tensor, dropout: Callable[[Tensor], Tensor]) -> Tensor:
        h = self.ln1(x)
        x = x.add(dropout(self.attn(h, h)))
        return x.add(dropout(self.ffn(self.ln2(x))))


class _DecoderLayer:
    def __init__(self, prefix: str, cfg: ModelConfig, init):
        self.ln1 = _LayerNormParams(f"{prefix}.ln1", cfg.embed_dim)
        self.self_attn = _Attention(f"{prefix}.self_attn", cfg.embed_dim, cfg.heads, init)
        self.ln2 = _LayerNormParams(f"{prefix}.ln2", cfg.embed_dim)
        self.cross_attn = _Attention(f"{prefix}.cross_attn", cfg.embed_dim, cfg.heads, init)
        self.ln3 = _LayerNormParams(f"{prefix}.ln3", cfg.embed_dim)
        self.ffn = _Ffn(f"{prefix}.ffn", cfg.embed_dim, cfg.ff_dim, init)

    def params(self):
        return (self.ln1.params() + self.self_attn.params() + self.ln2.params()
                + self.cross_attn.params() + self.ln3.params() + self.ffn.params())

    def __call__(self, x: Tensor, enc: Tensor, dropout, use_cross: bool = True) -> Tensor:
        h = self.ln1(x)
        x = x.add(dropout(self.self_attn(h, h)))
        if use_cross:
            x = x.add(dropout(self.cross_attn(self.ln2(x), enc)))
        return x.add(dropout(self.ffn(self.ln3(x))))


class PhysicsFormer:
    """Encoder-decoder over stations with a dynamic-core residual head."""

    def __init__(self, config: ModelConfig, core: DynamicCoreParams,
                 climatologies: Sequence[Climatology], stats: ClimateStats,
                 station_ids: Sequence[str]):
        self.config = config
        self.core = core
        self.climatologies = list(climatologies)
        self.stats = stats
        self.station_ids = list(station_ids)
        self._rng = np.random.Generator(np.random.PCG64(config.seed))
        self._drop_rng = np.random.Generator(np.random.PCG64(config.seed + 1))
        self.training = False

        cfg = config
        init = self._trunc_normal
        self.emb_var_enc = _Mlp("emb_var_enc", cfg.lookback * cfg.n_variables, cfg.embed_dim, init)
        self.emb_var_dec = _Mlp("emb_var_dec", cfg.decoder_history * cfg.n_variables, cfg.embed_dim, init)
        self.emb_geo = _Mlp("emb_geo", 2 * 2 * cfg.k_geo, cfg.embed_dim, init)
        self.emb_time = _Mlp("emb_time", 4 * 2 * cfg.k_time, cfg.embed_dim, init)
        self.encoder = [_EncoderLayer(f"enc{i}", cfg, init) for i in range(cfg.encoder_layers)]
        self.enc_norm = _LayerNormParams("enc_norm", cfg.embed_dim)
        self.decoder = [_DecoderLayer(f"dec{i}", cfg, init) for i in range(cfg.decoder_layers)]
        self.dec_norm = _LayerNormParams("dec_norm", cfg.embed_dim)
        # zero-initialized head: training starts exactly at the core forecast
        self.proj_w = Parameter("proj.w", Tensor(
            np.zeros((cfg.embed_dim, cfg.horizon * cfg.n_variables)), requires_grad=True))
        self.proj_b = Parameter("proj.b", Tensor(
            np.zeros(cfg.horizon * cfg.n_variables), requires_grad=True))
        self.alpha = Parameter("alpha", Tensor(np.asarray(1.0), requires_grad=True))
        self._std_core, self._std_clims, self._std_floor = standardized_core_inputs(
            core, self.climatologies, stats)

    # -- parameters -------------------------------------------------------

    def _trunc_normal(self, shape, sigma: float = 0.02) -> np.ndarray:
        out = self._rng.normal(0.0, sigma, size=shape)
        bad = np.abs(out) > 2 * sigma
        while bad.any():
            out[bad] = self._rng.normal(0.0, sigma, size=int(bad.sum()))
            bad = np.abs(out) > 2 * sigma
        return out

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        params += self.emb_var_enc.params() + self.emb_var_dec.params()
        params += self.emb_geo.params() + self.emb_time.params()
        for layer in self.encoder:
            params += layer.params()
        params += self.enc_norm.params()
        for layer in self.decoder:
            params += layer.params()
        params += self.dec_norm.params()
        params += [self.proj_w, self.proj_b, self.alpha]
        names = [p.name for p in params]
        assert len(names) == len(set(names)), "parameter names must be unique"
        return params

    def parameter_count(self) -> int:
        return parameter_count(self.parameters())

    def _dropout(self, x: Tensor) -> Tensor:
        p = self.config.dropout
        if not self.training or p <= 0.0:
            return x
        mask = (self._drop_rng.random(x.shape) >= p) / (1.0 - p)
        return x.mul(Tensor(mask))

    # -- forward pieces ----------------------------------------------------

    def _embed(self, inputs: np.ndarray, markers: np.ndarray, geo: np.ndarray,
               var_mlp: _Mlp) -> Tensor:
        """Sum of history, geography, and timing embeddings: (B, N, D)."""
        b, n, t, v = inputs.shape
        hist = Tensor(inputs.reshape(b, n, t * v))
        e = var_mlp(hist)
        geo_angles = np.deg2rad(geo)                       # (N, 2)
        e = e.add(self.emb_geo(Tensor(fourier_features(geo_angles, self.config.k_geo))))
        mean_angles = marker_angles(markers.astype(np.float64)).mean(axis=1)  # (B, 4)
        te = self.emb_time(Tensor(fourier_features(mean_angles, self.config.k_time)))
        return e.add(te.reshape(b, 1, self.config.embed_dim))

    def embed_stations(self, batch: WindowBatch) -> Tensor:
        return self._embed(batch.inputs, batch.markers, batch.geo, self.emb_var_enc)

    def embed_decoder(self, batch: WindowBatch) -> Tensor:
        ell = self.config.decoder_history
        return self._embed(batch.inputs[:, :, -ell:, :], batch.markers[:, -ell:, :],
                           batch.geo, self.emb_var_dec)

    def encode(self, e: Tensor) -> Tensor:
        x = e
        for layer in self.encoder:
            x = layer(x, self._dropout)
        return self.enc_norm(x)

    def decode(self, e_dec: Tensor, h_enc: Tensor, use_cross: bool = True) -> Tensor:
        x = e_dec
        for layer in self.decoder:
            x = layer(x, h_enc, self._dropout, use_cross=use_cross)
        return self.dec_norm(x)

    def core_forecast(self, batch: WindowBatch) -> np.ndarray:
        """Standardized dynamic-core forecast: (B, N, tau, V), constant."""
        b, n, _, v = batch.inputs.shape
        tau = self.config.horizon
        out = np.empty((b, n, tau, v))
        for i in range(b):
            last = batch.inputs[i, :, -1, :]
            out[i] = integrate(last, int(batch.target_start_hours[i]) - 1, tau,
                               self._std_core, self._std_clims,
                               wind_floor=self._std_floor)
        return out

    def forecast(self, batch: WindowBatch, use_cross: bool = True) -> ForecastOutput:
        cfg = self.config
        b, n = batch.inputs.shape[:2]
        h_enc = self.encode(self.embed_stations(batch))
        z_dec = self.decode(self.embed_decoder(batch), h_enc, use_cross=use_cross)
        flat = z_dec.matmul(self.proj_w.tensor).add(self.proj_b.tensor)
        residual = flat.reshape(b, n, cfg.horizon, cfg.n_variables)
        x_phys = self.core_forecast(batch)
        prediction = Tensor(x_phys).add(residual)
        return ForecastOutput(prediction=prediction, physical_core=x_phys,
                              residual=residual)

    # -- objective ---------------------------------------------------------

    def loss(self, output: ForecastOutput, targets: np.ndarray) -> tuple[Tensor, LossComponents]:
        """Data fidelity plus the two physics penalties.

        Horizons too short for a difference stencil disable the matching
        term (tau < 2 disables the pressure-wind term, tau < 3 the
        smoothness term) and report it in the components.
        """
        cfg = self.config
        pred = output.prediction
        tau = cfg.horizon
        err = pred.sub(Tensor(targets))
        l_data = err.square().mean()
        total = l_data
        pw_enabled = tau >= 2
        smooth_enabled = tau >= 3
        l_pw = l_smooth = None
        if pw_enabled:
            p_hat = pred.narrow(3, IDX_P, 1)
            v_hat = pred.narrow(3, IDX_RATE, 1)
            resid = p_hat.diff(axis=2).sub(v_hat.diff(axis=2).mul(self.alpha.tensor))
            l_pw = resid.square().mean()
            total = total.add(l_pw.scalar_mul(cfg.lambda_pw))
        if smooth_enabled:
            t_hat = pred.narrow(3, IDX_T, 1)
            v_hat = pred.narrow(3, IDX_RATE, 1)
            d2t = t_hat.diff(axis=2).diff(axis=2)
            d2v = v_hat.diff(axis=2).diff(axis=2)
            l_smooth = d2t.square().mean().add(d2v.square().mean())
            total = total.add(l_smooth.scalar_mul(cfg.lambda_smooth))
        comps = LossComponents(
            total=total.item(), data=l_data.item(),
            pw=l_pw.item() if l_pw is not None else 0.0,
            smooth=l_smooth.item() if l_smooth is not None else 0.0,
            pw_enabled=pw_enabled, smooth_enabled=smooth_enabled)
        return total, comps

    # -- persistence -------------------------------------------------------

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        entries = [(p.name, p.tensor.data) for p in self.parameters()]
        entries.append(("core/kappa", self.core.kappa))
        entries.append(("core/beta", np.array([self.core.beta])))
        entries.append(("core/dt", np.array([self.core.dt])))
        entries.append(("stats/mean", self.stats.mean))
        entries.append(("stats/std", self.stats.std))
        for sid, clim in zip(self.station_ids, self.climatologies):
            entries.append((f"clim/{sid}/table", clim.table))
            entries.append((f"clim/{sid}/available", clim.available.astype(np.float64)))
            entries.append((f"clim/{sid}/fallback", clim.fallback))
        return entries

    def save(self, path) -> None:
        """Checkpoint (binary) plus a ModelConfig JSON sidecar."""
        save_checkpoint(path, self.state_arrays())
        sidecar = {"model": self.config.to_json_dict(),
                   "stations": self.station_ids,
                   "core": self.core.to_json_dict()}
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PhysicsFormer":
        arrays = load_checkpoint(path)
        with open(str(path) + ".json", "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        config = ModelConfig.from_json_dict(sidecar["model"])
        station_ids = sidecar["stations"]
        core = DynamicCoreParams(kappa=arrays["core/kappa"],
                                 beta=float(arrays["core/beta"][0]),
                                 dt=float(arrays["core/dt"][0]))
        stats = ClimateStats(mean=arrays["stats/mean"], std=arrays["stats/std"])
        clims = [Climatology(table=arrays[f"clim/{sid}/table"],
                             available=arrays[f"clim/{sid}/available"] > 0.5,
                             fallback=arrays[f"clim/{sid}/fallback"])
                 for sid in station_ids]
        model = cls(config, core, clims, stats, station_ids)
        for p in model.parameters():
            if p.name not in arrays:
                raise ShapeMismatch(f"checkpoint missing parameter {p.name}")
            if arrays[p.name].shape != p.tensor.data.shape:
                raise ShapeMismatch(f"checkpoint parameter {p.name} has shape "
                                    f"{arrays[p.name].shape}, expected {p.tensor.data.shape}")
            p.tensor.data = arrays[p.name].copy()
        return model


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    iterations: int = 2000
    base_lr: float = 1e-4
    seed: int = 0
    batch: int = 8
    stride: int = 1
    eval_every: int = 100
    patience: int = 3
    val_batches: int = 4
    checkpoint_path: str | None = None


@dataclass
class TrainResult:
    model: "PhysicsFormer"
    curve: list[dict]
    best_val_loss: float
    stopped_early: bool
    iterations_run: int
    train_seconds: float

    def write_curve(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("iteration,total,data,pw,smooth,lr,alpha\n")
            for row in self.curve:
                fh.write("{iteration},{total},{data},{pw},{smooth},{lr},{alpha}\n".format(
                    iteration=row["iteration"],
                    **{k: repr(row[k]) for k in ("total", "data", "pw", "smooth", "lr", "alpha")}))


def _epoch_batches(catalog, split, stats, cfg: ModelConfig, tcfg: TrainConfig,
                   values, epoch: int) -> Iterable[WindowBatch]:
    return make_windows(catalog, split, stats, lookback=cfg.lookback,
                        horizon=cfg.horizon, stride=tcfg.stride,
                        batch=tcfg.batch, shuffle=True,
                        seed=tcfg.seed + 7919 * epoch, values=values)


def validation_loss(model: PhysicsFormer, catalog, split, stats,
                    tcfg: TrainConfig, values) -> float | None:
    """Mean loss over the first validation batches; None when the split is
    too short to hold a single window (early stopping then stands down)."""
    model.training = False
    a, b = split
    if b - a < model.config.lookback + model.config.horizon:
        return None
    losses = []
    batches = make_windows(catalog, split, stats, lookback=model.config.lookback,
                           horizon=model.config.horizon, stride=tcfg.stride,
                           batch=tcfg.batch, shuffle=False, values=values)
    for i, batch in enumerate(batches):
        if i >= tcfg.val_batches:
            break
        out = model.forecast(batch)
        _, comps = model.loss(out, batch.targets)
        losses.append(comps.total)
    return float(np.mean(losses)) if losses else None


def train_model(model: PhysicsFormer, catalog: DatasetCatalog, splits: SplitRanges,
                stats: ClimateStats, tcfg: TrainConfig,
                values: np.ndarray | None = None) -> TrainResult:
    """Adam + cosine decay with early stopping on validation loss.

    Stops when validation fails to improve ``patience`` consecutive
    evaluations; the parameters with the lowest validation loss are
    restored before returning.  Deterministic for a fixed seed and config.
    """
    if values is None:
        values, _ = catalog.load_values()
    cfg = model.config
    opt = Adam(model.parameters(), base_lr=tcfg.base_lr, total_iterations=tcfg.iterations)
    curve: list[dict] = []
    best_val = float("inf")
    best_state = [p.tensor.data.copy() for p in model.parameters()]
    bad_evals = 0
    stopped = False
    it = 0
    epoch = 0
    t0 = time.perf_counter()
    batches = iter(_epoch_batches(catalog, splits.train, stats, cfg, tcfg, values, epoch))
    while it < tcfg.iterations:
        try:
            batch = next(batches)
        except StopIteration:
            epoch += 1
            batches = iter(_epoch_batches(catalog, splits.train, stats, cfg, tcfg, values, epoch))
            continue
        model.training = True
        out = model.forecast(batch)
        total, comps = model.loss(out, batch.targets)
        if not math.isfinite(comps.total):
            raise NaNLoss(f"non-finite loss at iteration {it}", iteration=it)
        opt.zero_grad()
        total.backward()
        lr = opt.step()
        curve.append({"iteration": it, "total": comps.total, "data": comps.data,
                      "pw": comps.pw, "smooth": comps.smooth, "lr": lr,
                      "alpha": model.alpha.tensor.item()})
        it += 1
        if it % tcfg.eval_every == 0 or it == tcfg.iterations:
            val = validation_loss(model, catalog, splits.val, stats, tcfg, values)
            if val is None:
                best_state = [p.tensor.data.copy() for p in model.parameters()]
            elif val < best_val:
                best_val = val
                best_state = [p.tensor.data.copy() for p in model.parameters()]
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals >= tcfg.patience:
                    stopped = True
                    break
    model.training = False
    for p, data in zip(model.parameters(), best_state):
        p.tensor.data = data
    train_seconds = time.perf_counter() - t0
    if tcfg.checkpoint_path:
        os.makedirs(os.path.dirname(str(tcfg.checkpoint_path)) or ".", exist_ok=True)
        model.save(tcfg.checkpoint_path)
    return TrainResult(model=model, curve=curve, best_val_loss=best_val,
                       stopped_early=stopped, iterations_run=it,
                       train_seconds=train_seconds)
