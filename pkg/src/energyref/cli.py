"""Command-line entry point: ``energyref <subcommand>``.

Exit codes: 0 on success, 2 for usage errors, otherwise the ``exit_code`` of
the raised error category (3 input, 4 config/startup, 5 protocol). Errors
print as ``error[<category>]: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import signal
import sys
import threading
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from .client import ContestantProfile, run_contestant, with_overrides
from .dataset import (DEFAULT_DUP_THRESHOLD, content_type_for, decode_image, find_duplicates,
                      generate_fixture, load_manifest)
from .energy import EnergyReport, integrate_energy, read_trace
from .errors import ConfigError, EnergyRefError
from .referee import Referee, load_config, make_server, score_run, start_reaper
from .scoring import DEFAULT_BIN_WIDTH, ScoreReport, score_statistics, track1_metrics
from .wire import parse_detections, parse_track1_log

log = logging.getLogger("energyref")


def _write(out: str | None, text: str) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


# --- serve ------------------------------------------------------------------

def cmd_serve(args) -> int:
    config = load_config(args.config)
    referee = Referee.from_config(config)
    host, port = config.host_port
    try:
        server = make_server(referee, host, port)
    except OSError as exc:
        raise ConfigError(f"cannot listen on {config.listen}: {exc}") from exc
    stop_reaper = start_reaper(referee)

    def _stop(signum, _frame):
        log.info("signal %d received, shutting down", signum)
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, _stop)
    signal.signal(signal.SIGINT, _stop)
    log.info("ready: referee listening on %s (%d images, session %.0f s)",
             server.url, referee.num_images, referee.session_seconds)
    print(f"ready {server.url}", flush=True)
    try:
        server.serve_forever(poll_interval=0.2)
    finally:
        stop_reaper.set()
        server.server_close()
        for report in referee.shutdown():
            log.info("final report %s: mAP=%.6g energy=%.6g Wh score=%.6g",
                     report.label, report.map_value, report.energy_wh, report.score)
    return 0


# --- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.profile:
        try:
            profile = ContestantProfile.from_dict(json.loads(_read(args.profile)))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse profile {args.profile}: {exc}") from exc
    else:
        profile = ContestantProfile.preset(args.strategy)
    profile = with_overrides(profile, box_jitter_px=args.jitter, label_flip_prob=args.flip,
                             drop_prob=args.drop, per_image_delay_ms=args.delay_ms,
                             batch_size=args.batch_size)
    manifest = load_manifest(args.manifest)
    summary = run_contestant(profile, args.address, (args.team, args.secret), manifest, seed=args.seed)
    _write(args.out, json.dumps(asdict(summary), indent=1) + "\n")
    return 1 if summary.partial else 0


# --- score ------------------------------------------------------------------

def offline_report(detections_path: str, manifest_path: str, energy_wh: float | None = None,
                   trace_path: str | None = None, window: Sequence[float] | None = None,
                   label: str = "") -> ScoreReport:
    manifest = load_manifest(manifest_path, check_files=False)
    dets = parse_detections(_read(detections_path), set(manifest.image_ids),
                            manifest.num_classes, detections_path)
    if trace_path:
        samples = read_trace(trace_path)
        if window:
            start, end = window
        else:
            start = samples[0].t_seconds if samples else 0.0
            end = samples[-1].t_seconds if samples else 0.0
        energy = integrate_energy(samples, start, end)
    elif energy_wh is not None:
        if not energy_wh > 0:
            raise ConfigError(f"--energy-wh must be positive, got {energy_wh!r}")
        energy = EnergyReport(energy_wh, 0.0, 0.0, 0)
    else:
        raise ConfigError("score needs --energy-wh or --trace")
    return score_run(dets, manifest, energy, label)


def cmd_score(args) -> int:
    report = offline_report(args.detections, args.manifest, args.energy_wh, args.trace,
                            args.window, args.label)
    _write(args.out, report.dumps())
    return 0


# --- track1 -----------------------------------------------------------------

def cmd_track1(args) -> int:
    records = parse_track1_log(_read(args.log), args.log)
    report = track1_metrics(records, args.budget_ms, args.total)
    lines = [f"{k}={v!r}" for k, v in asdict(report).items()]
    _write(args.out, "\n".join(lines) + "\n")
    return 0


# --- dedup ------------------------------------------------------------------

def _load_images(sources: Sequence[str]) -> tuple[list[str], list]:
    names, pixels = [], []
    for src in sources:
        p = Path(src)
        if p.suffix == ".json":
            m = load_manifest(p)
            items = [(e.image_id, e.path, e.content_type) for e in m.images]
        elif p.is_dir():
            items = [(f.name, f, content_type_for(f)) for f in sorted(p.iterdir())
                     if f.suffix.lower() in (".ppm", ".pgm")]
        else:
            items = [(p.name, p, content_type_for(p))]
        for name, path, ctype in items:
            names.append(name)
            pixels.append(decode_image(Path(path).read_bytes(), ctype))
    return names, pixels


def cmd_dedup(args) -> int:
    names, corpus = _load_images(args.images)
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["a", "b"])
    if args.against:
        ref_names, ref = _load_images(args.against)
        if args.mode in ("cross", "both"):
            for i, j in find_duplicates(corpus, args.threshold, reference=ref):
                writer.writerow([names[i], ref_names[j]])
    if not args.against or args.mode in ("intra", "both"):
        for i, j in find_duplicates(corpus, args.threshold):
            writer.writerow([names[i], names[j]])
    _write(args.out, out.getvalue())
    return 0


# --- fixture ----------------------------------------------------------------

def cmd_fixture(args) -> int:
    try:
        width, height = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--size must look like 32x32, got {args.size!r}") from None
    manifest = generate_fixture(args.out, args.images, args.classes, width, height,
                                args.min_objects, args.max_objects, args.seed)
    print(f"wrote {len(manifest.images)} images, {len(manifest.ground_truth)} objects "
          f"to {manifest.source}")
    return 0


# --- report -----------------------------------------------------------------

def comparison_rows(reports: Sequence[ScoreReport], baseline: int = 0) -> list[dict]:
    base = reports[baseline].score
    rows = []
    for n, r in enumerate(reports):
        rows.append({"label": r.label or str(n + 1), "map": r.map_value, "energy_wh": r.energy_wh,
                     "score": r.score, "ratio": r.score / base if base else float("nan")})
    return rows


def render_report(reports: Sequence[ScoreReport], baseline: int = 0, fmt: str = "text",
                  bin_width: float = DEFAULT_BIN_WIDTH) -> str:
    rows = comparison_rows(reports, baseline)
    out = io.StringIO()
    if fmt == "csv":
        writer = csv.writer(out)
        writer.writerow(["label", "map", "energy_wh", "score", "ratio"])
        for r in rows:
            writer.writerow([r["label"], f"{r['map']:.6g}", f"{r['energy_wh']:.6g}",
                             f"{r['score']:.4f}", f"{r['ratio']:.1f}"])
    else:
        width = max(5, *(len(r["label"]) for r in rows))
        out.write(f"{'label':<{width}}  {'mAP':>8}  {'energy':>8}  {'score':>8}  {'ratio':>6}\n")
        for r in rows:
            out.write(f"{r['label']:<{width}}  {r['map']:>8.5f}  {r['energy_wh']:>8.4f}  "
                      f"{r['score']:>8.4f}  {r['ratio']:>6.1f}\n")
    if len(reports) >= 2:
        stats = score_statistics([r.score for r in reports], bin_width)
        out.write("\n" if fmt == "text" else "")
        for key in ("mean", "median", "mode", "stddev"):
            value = getattr(stats, key)
            out.write(f"{key},{value:.4f}\n" if fmt == "csv" else f"{key:<7} {value:.4f}\n")
    return out.getvalue()


def cmd_report(args) -> int:
    reports = [ScoreReport.loads(_read(p), p) for p in args.reports]
    if not 0 <= args.baseline < len(reports):
        raise ConfigError(f"--baseline {args.baseline} outside 0..{len(reports) - 1}")
    _write(args.out, render_report(reports, args.baseline, "csv" if args.csv else "text",
                                   args.bin_width))
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="energyref", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the referee HTTP service")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate", help="run a mock contestant against a referee")
    p.add_argument("--address", required=True)
    p.add_argument("--team", required=True)
    p.add_argument("--secret", required=True)
    p.add_argument("--manifest", required=True, help="ground truth the mock detector degrades")
    p.add_argument("--strategy", choices=["oracle", "noisy", "lazy", "slow"], default="oracle")
    p.add_argument("--profile", help="JSON profile file (overrides --strategy)")
    p.add_argument("--jitter", type=float)
    p.add_argument("--flip", type=float)
    p.add_argument("--drop", type=float)
    p.add_argument("--delay-ms", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("score", help="score a detections file offline")
    p.add_argument("--detections", required=True)
    p.add_argument("--manifest", required=True)
    energy = p.add_mutually_exclusive_group(required=True)
    energy.add_argument("--energy-wh", type=float)
    energy.add_argument("--trace")
    p.add_argument("--window", type=float, nargs=2, metavar=("START", "END"))
    p.add_argument("--label", default="")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("track1", help="wall-time metrics from a classification log")
    p.add_argument("--log", required=True)
    p.add_argument("--budget-ms", type=float, default=30.0)
    p.add_argument("--total", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_track1)

    p = sub.add_parser("dedup", help="find near-duplicate images by thumbnail distance")
    p.add_argument("images", nargs="+", help="manifest .json files, directories or PNM files")
    p.add_argument("--against", nargs="+", help="previous corpus to compare against")
    p.add_argument("--mode", choices=["intra", "cross", "both"], default="cross",
                   help="with --against: which pairs to report")
    p.add_argument("--threshold", type=float, default=DEFAULT_DUP_THRESHOLD)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("fixture", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--images", type=int, default=20)
    p.add_argument("--classes", type=int, default=200)
    p.add_argument("--size", default="32x32")
    p.add_argument("--min-objects", type=int, default=0)
    p.add_argument("--max-objects", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("report", help="compare score reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--baseline", type=int, default=0, help="index of the ratio baseline")
    p.add_argument("--bin-width", type=float, default=DEFAULT_BIN_WIDTH)
    p.add_argument("--csv", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EnergyRefError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
