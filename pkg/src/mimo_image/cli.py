"""Command-line entry point: ``mimo-image run|sweep|export-test-images``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import MimoImageError
from .experiment import FILTER_KINDS, SNR_REFERENCES, ExperimentConfig, run_experiment, run_sweep


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _int_list(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":")
        return list(range(int(lo), int(hi)))
    return [int(t) for t in text.replace(",", " ").split()]


def _add_experiment_args(p: argparse.ArgumentParser) -> None:
    d = ExperimentConfig()
    p.add_argument("--image-path", required=True, help="binary PGM (P5, maxval 255)")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--m-antennas", type=int, default=d.m_antennas)
    p.add_argument("--k-antennas", type=int, default=d.k_antennas)
    p.add_argument("--mod-order", type=int, default=d.mod_order, choices=(4, 16, 64, 256))
    p.add_argument("--snr-db", type=float, default=d.snr_db)
    p.add_argument(
        "--snr-reference",
        choices=SNR_REFERENCES,
        default=d.snr_reference,
        help="transmit: SNR = rho/sigma2 per constellation point; "
        "receive: SNR = K rho/sigma2 per receive antenna",
    )
    p.add_argument("--beta", type=float, default=d.beta)
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--epsilon", type=float, default=d.epsilon)
    p.add_argument("--max-iterations", type=int, default=d.max_iterations)
    p.add_argument(
        "--filter-kind", "--filter", dest="filter_kind", choices=FILTER_KINDS, default=d.filter_kind
    )
    p.add_argument("--gauss-sigma", type=float, default=d.gauss_sigma)
    p.add_argument("--gauss-radius", type=int, default=None, help="default ceil(3 sigma)")
    p.add_argument("--paper-exact-kernel", action="store_true",
                   help="use exp(-(x^2+y^2)/sigma^2) instead of the standard 2 sigma^2")
    p.add_argument("--patch-noise-level", type=float, default=d.patch_noise_level)
    p.add_argument("--patch-size", type=int, default=d.patch_size)
    p.add_argument("--patch-stride", type=int, default=d.patch_stride)
    p.add_argument("--per-vector-fading", action="store_true",
                   help="draw an independent channel for every vector")
    p.add_argument("--dump-channel", action="store_true", help="write channel.txt")
    p.add_argument("--per-vector-trace", action="store_true", help="write traces.csv")


def _config(args: argparse.Namespace, **override) -> ExperimentConfig:
    keys = ExperimentConfig.__dataclass_fields__.keys()
    values = {k: getattr(args, k) for k in keys if hasattr(args, k)}
    values.update(override)
    return ExperimentConfig(**values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mimo-image",
        description="Send a grayscale image over a simulated Massive MIMO uplink and recover it.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="single experiment (optionally averaged over seeds)")
    _add_experiment_args(run)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--num-seeds", type=int, default=1)

    sweep = sub.add_parser("sweep", help="grid of SNR values x seeds, written to sweep.csv")
    _add_experiment_args(sweep)
    sweep.add_argument("--snr-list", type=_float_list, required=True, help='e.g. "0,5,10,15"')
    sweep.add_argument("--seeds", type=_int_list, default=[0], help='"0,1,2" or "0:5"')

    exp = sub.add_parser("export-test-images", help="write bundled 512x512 test images as PGM")
    exp.add_argument("out_dir")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            report = run_experiment(_config(args))
            q = report.quality
            line = f"PSNR unfiltered {q['unfiltered'].psnr_db:.2f} dB"
            for kind in report.config.filter_variants:
                line += f", {kind} {q[kind].psnr_db:.2f} dB"
            print(f"{line}; SER {report.symbol_error_rate:.4f}; "
                  f"median iterations {report.median_iterations:g}")
            if report.config.out_dir is None:
                sys.stdout.write(report.to_json())
        elif args.command == "sweep":
            cfg = _config(args, seed=args.seeds[0], num_seeds=1)
            result = run_sweep(cfg, args.snr_list, args.seeds)
            if cfg.out_dir is None:
                sys.stdout.write(result.rows_csv())
            failed = [r for r in result.rows if r.get("error")]
            for r in failed:
                print(f"cell snr={r['snr_db']} seed={r['seed']} failed: {r['error']}", file=sys.stderr)
        elif args.command == "export-test-images":
            from .testimages import export_pgm

            for path in export_pgm(Path(args.out_dir)):
                print(path)
    except MimoImageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
