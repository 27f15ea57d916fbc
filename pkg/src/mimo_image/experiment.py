"""End-to-end image transmission experiments.

A run goes load -> vectorize -> map -> draw channel -> transmit -> detect
-> slice/demap -> restore -> post-filter -> metrics. Every random draw is
taken from a named sub-stream of the run seed: the channel draw never
depends on the filter choice, so unfiltered and filtered images of one
seed always share the same noisy recovery.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import admm, channel, constellation, filters
from .errors import ConfigurationError, MimoImageError, StageError
from .image import (
    ImagePlane,
    QualityReport,
    byte_error_rate,
    encode_pgm,
    load_pgm,
    psnr,
    restore,
    symbol_error_rate,
    vectorize,
)

log = logging.getLogger(__name__)

FILTER_KINDS = ("none", "gaussian", "patch", "all")
SNR_REFERENCES = ("transmit", "receive")


@dataclass
class ExperimentConfig:
    """All knobs of one experiment; defaults are the reference operating point.

    ``snr_reference`` selects what ``snr_db`` measures. ``"transmit"`` is
    ``rho / sigma2`` with ``rho`` the power of each constellation point.
    ``"receive"`` is the per-antenna received SNR ``K rho / sigma2``, so
    ``rho`` is lowered by ``K`` for the same nominal SNR.
    """

    image_path: str | None = None
    m_antennas: int = 64
    k_antennas: int = 4
    mod_order: int = 256
    snr_db: float = 5.0
    beta: float = 1.26
    alpha: float = 1.62
    epsilon: float = 1e-4
    max_iterations: int = 50
    filter_kind: str = "none"
    gauss_sigma: float = 1.3
    gauss_radius: int | None = None
    patch_noise_level: float = 41.0
    patch_size: int = 8
    patch_stride: int = 4
    seed: int = 0
    num_seeds: int = 1
    out_dir: str | None = None
    paper_exact_kernel: bool = False
    per_vector_fading: bool = False
    snr_reference: str = "transmit"
    dump_channel: bool = False
    per_vector_trace: bool = False

    def validate(self) -> None:
        if self.filter_kind not in FILTER_KINDS:
            raise ConfigurationError(
                f"filter_kind must be one of {FILTER_KINDS}, got {self.filter_kind!r}"
            )
        if self.snr_reference not in SNR_REFERENCES:
            raise ConfigurationError(
                f"snr_reference must be one of {SNR_REFERENCES}, got {self.snr_reference!r}"
            )
        if self.m_antennas < 1 or self.k_antennas < 1:
            raise ConfigurationError("antenna counts must be >= 1")
        if self.m_antennas < self.k_antennas:
            raise ConfigurationError(
                f"need m_antennas >= k_antennas, got {self.m_antennas} < {self.k_antennas}"
            )
        if self.num_seeds < 1:
            raise ConfigurationError(f"num_seeds must be >= 1, got {self.num_seeds}")
        bps = constellation.build_qam(self.mod_order).bits_per_symbol
        if (self.k_antennas * bps) % 8:
            raise ConfigurationError(
                f"K={self.k_antennas} symbols of {bps} bits do not hold whole bytes"
            )
        self.admm_config()
        filters.gaussian_kernel(self.gauss_sigma, self.gauss_radius, self.paper_exact_kernel)
        filters.PatchFilterConfig(
            patch_size=self.patch_size,
            stride=self.patch_stride,
            noise_level=self.patch_noise_level,
        )

    def admm_config(self) -> admm.AdmmConfig:
        return admm.AdmmConfig(
            beta=self.beta,
            alpha=self.alpha,
            epsilon=self.epsilon,
            max_iterations=self.max_iterations,
        )

    def link_params(self) -> channel.LinkParams:
        rho = channel.snr_to_rho(self.snr_db, 1.0)
        if self.snr_reference == "receive":
            rho /= self.k_antennas
        return channel.LinkParams(rho=rho, sigma2=1.0)

    @property
    def filter_variants(self) -> tuple[str, ...]:
        if self.filter_kind == "all":
            return ("gaussian", "patch")
        if self.filter_kind == "none":
            return ()
        return (self.filter_kind,)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SeedResult:
    seed: int
    quality: dict[str, QualityReport]
    symbol_error_rate: float
    mean_iterations: float
    median_iterations: float
    max_iteration_hits: int


@dataclass
class RunReport:
    """Metrics of one experiment (one or more seeds).

    ``quality`` averages PSNR/MSE over seeds for each variant
    (``"unfiltered"`` plus any filters). ``convergence`` has one row per
    iteration ``n``: mean ``|L(n-1) - L(n)|`` and mean ``L(n)`` over all
    vectors, where a vector that already stopped contributes a zero change
    and its final Lagrangian.
    """

    config: ExperimentConfig
    quality: dict[str, QualityReport]
    symbol_error_rate: float
    mean_iterations: float
    median_iterations: float
    per_seed: list[SeedResult]
    convergence: list[dict] = field(default_factory=list)
    wall_time_s: float = 0.0
    images: dict[str, ImagePlane] = field(default_factory=dict, repr=False)
    reference: ImagePlane | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        """JSON-ready view; wall time is left out so reports are reproducible."""
        return {
            "config": self.config.to_dict(),
            "effective": {
                "rho": self.config.link_params().rho,
                "sigma2": self.config.link_params().sigma2,
                "gauss_radius": self.config.gauss_radius
                if self.config.gauss_radius is not None
                else filters.default_radius(self.config.gauss_sigma),
                "seeds": [r.seed for r in self.per_seed],
            },
            "quality": {k: v.to_dict() for k, v in self.quality.items()},
            "symbol_error_rate": self.symbol_error_rate,
            "mean_iterations": self.mean_iterations,
            "median_iterations": self.median_iterations,
            "per_seed": [
                {
                    "seed": r.seed,
                    "quality": {k: v.to_dict() for k, v in r.quality.items()},
                    "symbol_error_rate": r.symbol_error_rate,
                    "mean_iterations": r.mean_iterations,
                    "median_iterations": r.median_iterations,
                    "max_iteration_hits": r.max_iteration_hits,
                }
                for r in self.per_seed
            ],
            "convergence": self.convergence,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass
class Transmission:
    """Intermediate products of one seed, before post-filtering."""

    reference: ImagePlane
    recovered: ImagePlane
    tx_labels: np.ndarray
    detection: admm.BatchDetection
    channel: channel.ChannelRealization | None


def _stage(name: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (MimoImageError, OSError, ArithmeticError, ValueError) as exc:
        raise StageError(name, exc) from exc


def transmit_image(image: ImagePlane, config: ExperimentConfig, seed: int) -> Transmission:
    """Send one image over the link and detect it (no post-filtering)."""
    spec = _stage("constellation", constellation.build_qam, config.mod_order)
    bytes_per_vector = config.k_antennas * spec.bits_per_symbol // 8
    vec = _stage("vectorize", vectorize, image, bytes_per_vector)
    labels = _stage("map", constellation.bytes_to_labels, vec.vectors.ravel(), spec)
    tx_labels = labels.reshape(vec.z, config.k_antennas)
    symbols = spec.points[tx_labels]

    params = config.link_params()
    m, k = config.m_antennas, config.k_antennas
    if config.per_vector_fading:
        h = _stage("channel", channel.draw_per_vector_channels, m, k, vec.z, seed)
        realization = None
    else:
        realization = _stage(
            "channel", channel.draw_channel, m, k, channel.substream(seed, channel.STREAM_CHANNEL)
        )
        h = realization
    y = _stage("transmit", channel.transmit_vectors, h, symbols, params, seed)

    cfg = config.admm_config()
    factor = _stage("factor", admm.precompute_factor, h, params.rho, cfg.beta)
    det = _stage("detect", admm.detect_vectors, y, h, factor, params, cfg, spec)

    rx_bytes = _stage("demap", constellation.labels_to_bytes, det.labels.ravel(), spec)
    rx_vec = type(vec)(rx_bytes.reshape(vec.z, -1), vec.pad_count, vec.source_dims)
    recovered = _stage("restore", restore, rx_vec)
    return Transmission(image, recovered, tx_labels, det, realization)


def apply_filter(image: ImagePlane, kind: str, config: ExperimentConfig) -> ImagePlane:
    if kind == "gaussian":
        return filters.gaussian_filter(
            image, config.gauss_sigma, config.gauss_radius, config.paper_exact_kernel
        )
    if kind == "patch":
        pconf = filters.PatchFilterConfig(
            patch_size=config.patch_size,
            stride=config.patch_stride,
            noise_level=config.patch_noise_level,
        )
        return filters.patch_denoise(image, pconf)
    raise ConfigurationError(f"unknown filter {kind!r}")


class TraceAccumulator:
    """Running per-iteration sums of the Lagrangian over many vectors.

    A vector that stopped at iteration ``n`` keeps its final Lagrangian
    for all later iterations, so it contributes a zero change there.
    """

    def __init__(self, max_iterations: int):
        self.sum_delta = np.zeros(max_iterations + 1)
        self.sum_lag = np.zeros(max_iterations + 1)
        self.active = np.zeros(max_iterations + 1, dtype=np.int64)
        self.count = 0
        self.last = 0

    def add(self, traces: np.ndarray, iterations: np.ndarray) -> None:
        cols = np.arange(self.sum_lag.size)
        idx = np.minimum(cols[None, :], iterations[:, None])
        filled = np.take_along_axis(traces, idx, axis=1)
        self.sum_lag += filled.sum(axis=0)
        self.sum_delta[1:] += np.abs(np.diff(filled, axis=1)).sum(axis=0)
        self.active += (iterations[:, None] >= cols[None, :]).sum(axis=0)
        self.count += traces.shape[0]
        self.last = max(self.last, int(iterations.max()))

    def rows(self) -> list[dict]:
        if self.count == 0:
            return []
        return [
            {
                "iteration": n,
                "mean_abs_delta": float(self.sum_delta[n] / self.count) if n else None,
                "mean_lagrangian": float(self.sum_lag[n] / self.count),
                "active_vectors": int(self.active[n]),
            }
            for n in range(self.last + 1)
        ]


def run_experiment(config: ExperimentConfig, image: ImagePlane | None = None) -> RunReport:
    """Run ``config.num_seeds`` seeds starting at ``config.seed`` and write artifacts.

    Images and per-vector traces written to ``out_dir`` come from the first
    seed; metrics are averaged over all seeds. Nothing is written if any
    stage fails.
    """
    start = time.perf_counter()
    _stage("config", config.validate)
    if image is None:
        if config.image_path is None:
            raise StageError("load", ConfigurationError("no image_path given"))
        image = _stage("load", load_pgm, config.image_path)

    per_seed: list[SeedResult] = []
    acc = TraceAccumulator(config.max_iterations)
    iters = []
    images: dict[str, ImagePlane] = {}
    first: Transmission | None = None
    for seed in range(config.seed, config.seed + config.num_seeds):
        tx = transmit_image(image, config, seed)
        quality = {"unfiltered": psnr(image, tx.recovered)}
        ser = symbol_error_rate(tx.tx_labels, tx.detection.labels)
        quality["unfiltered"].symbol_error_rate = ser
        quality["unfiltered"].byte_error_rate = byte_error_rate(image, tx.recovered)
        seed_images = {"unfiltered": tx.recovered}
        for kind in config.filter_variants:
            out = _stage(f"filter:{kind}", apply_filter, tx.recovered, kind, config)
            q = psnr(image, out)
            q.byte_error_rate = byte_error_rate(image, out)
            quality[kind] = q
            seed_images[kind] = out
        it = tx.detection.iterations
        per_seed.append(
            SeedResult(
                seed=seed,
                quality=quality,
                symbol_error_rate=ser,
                mean_iterations=float(np.mean(it)),
                median_iterations=float(np.median(it)),
                max_iteration_hits=int(np.sum(it >= config.max_iterations)),
            )
        )
        acc.add(tx.detection.traces, it)
        iters.append(it)
        if first is None:
            first, images = tx, seed_images
        log.info("seed %d: SER %.4f, PSNR %.2f dB", seed, ser, quality["unfiltered"].psnr_db)

    all_iters = np.concatenate(iters)
    report = RunReport(
        config=config,
        quality=_mean_quality(per_seed),
        symbol_error_rate=float(np.mean([r.symbol_error_rate for r in per_seed])),
        mean_iterations=float(np.mean(all_iters)),
        median_iterations=float(np.median(all_iters)),
        per_seed=per_seed,
        convergence=acc.rows(),
        images=images,
        reference=image,
    )
    report.wall_time_s = time.perf_counter() - start
    if config.out_dir is not None:
        _stage("write", write_outputs, report, Path(config.out_dir), first)
    return report


def _mean_quality(per_seed: list[SeedResult]) -> dict[str, QualityReport]:
    out = {}
    for key in per_seed[0].quality:
        qs = [r.quality[key] for r in per_seed]
        lossless = all(q.lossless for q in qs)
        sers = [q.symbol_error_rate for q in qs if q.symbol_error_rate is not None]
        bers = [q.byte_error_rate for q in qs if q.byte_error_rate is not None]
        out[key] = QualityReport(
            psnr_db=float(np.mean([q.psnr_db for q in qs])),
            mse=float(np.mean([q.mse for q in qs])),
            lossless=lossless,
            symbol_error_rate=float(np.mean(sers)) if sers else None,
            byte_error_rate=float(np.mean(bers)) if bers else None,
        )
    return out


def convergence_csv(report: RunReport) -> str:
    if not report.convergence:
        raise MimoImageError("report holds no convergence trace")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "mean_abs_delta_lagrangian", "mean_lagrangian", "active_vectors"])
    for row in report.convergence[1:]:
        w.writerow(
            [
                row["iteration"],
                repr(row["mean_abs_delta"]),
                repr(row["mean_lagrangian"]),
                row["active_vectors"],
            ]
        )
    return buf.getvalue()


def emit_convergence_trace(report: RunReport, path: str | Path) -> None:
    """Write the averaged trace: one row per iteration ``n >= 1``."""
    Path(path).write_text(convergence_csv(report))


def write_outputs(report: RunReport, out_dir: Path, first: Transmission | None) -> None:
    """Render every artifact in memory first, then write them all."""
    cfg = report.config
    payload: dict[str, bytes] = {}
    payload["recovered_raw.pgm"] = encode_pgm(report.images["unfiltered"])
    variants = cfg.filter_variants
    if len(variants) == 1:
        payload["recovered_filtered.pgm"] = encode_pgm(report.images[variants[0]])
    else:
        for kind in variants:
            payload[f"recovered_filtered_{kind}.pgm"] = encode_pgm(report.images[kind])
    payload["report.json"] = report.to_json().encode()
    payload["convergence.csv"] = convergence_csv(report).encode()
    payload["timing.json"] = (json.dumps({"wall_time_s": report.wall_time_s}) + "\n").encode()
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, data in payload.items():
        (out_dir / name).write_bytes(data)
    if cfg.dump_channel and first is not None and first.channel is not None:
        channel.write_channel_text(first.channel, out_dir / "channel.txt")
    if cfg.per_vector_trace and first is not None:
        admm.write_trace_csv(first.detection, out_dir / "traces.csv")


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

SWEEP_COLUMNS = [
    "snr_db",
    "seed",
    "psnr_unfiltered_db",
    "psnr_filtered_db",
    "symbol_error_rate",
    "mean_iterations",
    "error",
]


@dataclass
class SweepResult:
    rows: list[dict]
    summary: list[dict]

    def rows_csv(self) -> str:
        return _csv(SWEEP_COLUMNS, self.rows)

    def summary_csv(self) -> str:
        cols = [
            "snr_db",
            "n_ok",
            "psnr_unfiltered_mean",
            "psnr_unfiltered_std",
            "psnr_filtered_mean",
            "psnr_filtered_std",
            "ser_mean",
            "ser_std",
        ]
        return _csv(cols, self.summary)


def _csv(cols: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({c: _fmt(row.get(c)) for c in cols})
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def run_sweep(
    base: ExperimentConfig,
    snr_list: Sequence[float],
    seeds: Sequence[int],
    image: ImagePlane | None = None,
) -> SweepResult:
    """One single-seed run per (SNR, seed) cell; failures are recorded, not raised."""
    if not snr_list or not seeds:
        raise ConfigurationError("snr_list and seeds must be non-empty")
    if image is None:
        image = _stage("load", load_pgm, base.image_path)
    variant = base.filter_variants[0] if base.filter_variants else None
    rows = []
    for snr in snr_list:
        for seed in seeds:
            cell = ExperimentConfig(
                **{**base.to_dict(), "snr_db": float(snr), "seed": int(seed), "num_seeds": 1, "out_dir": None}
            )
            row = {"snr_db": float(snr), "seed": int(seed)}
            try:
                rep = run_experiment(cell, image)
            except MimoImageError as exc:
                row["error"] = str(exc)
                rows.append(row)
                continue
            row["psnr_unfiltered_db"] = rep.quality["unfiltered"].psnr_db
            row["psnr_filtered_db"] = rep.quality[variant].psnr_db if variant else None
            row["symbol_error_rate"] = rep.symbol_error_rate
            row["mean_iterations"] = rep.mean_iterations
            rows.append(row)

    summary = []
    for snr in snr_list:
        ok = [r for r in rows if r["snr_db"] == float(snr) and "error" not in r]
        entry = {"snr_db": float(snr), "n_ok": len(ok)}
        for key, col in (
            ("psnr_unfiltered", "psnr_unfiltered_db"),
            ("psnr_filtered", "psnr_filtered_db"),
            ("ser", "symbol_error_rate"),
        ):
            vals = [r[col] for r in ok if r.get(col) is not None]
            entry[f"{key}_mean"] = float(np.mean(vals)) if vals else None
            entry[f"{key}_std"] = float(np.std(vals)) if vals else None
        summary.append(entry)

    if base.out_dir is not None:
        out = Path(base.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result = SweepResult(rows, summary)
        (out / "sweep.csv").write_text(result.rows_csv())
        (out / "sweep_summary.csv").write_text(result.summary_csv())
        return result
    return SweepResult(rows, summary)
