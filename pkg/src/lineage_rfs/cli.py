"""Command-line entry point: simulate, track, evaluate and stats.

Exit codes: 0 success, 1 the filter degenerated (or hit a capacity
limit), 2 an I/O, parse or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from .config import ConfigError, dump_config, load_config
from .filters import CapacityError, run_sequence
from .hypotheses import DegenerateDensityError
from .io import FileFormatError, read_detections, read_trackset, write_detections, write_trackset
from .metrics import TrackSet, division_counts, mitotic_event_error, ospa, ospa2, tra_counts, tra_score
from .simulator import generate_detections, generate_truth

log = logging.getLogger("lineage_rfs")

STATS_COLUMNS = ["frame", "n_hypotheses", "cardinality_mean", "cardinality_std", "cardinality_map",
                 "division_mean", "division_prob", "spawning_mean", "clutter_estimate", "mean_detection"]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.10g}"


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _read_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def _setup_logging() -> None:
    level = os.environ.get("RFS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _limit_threads(n) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be at least 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


# -- subcommands ---------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _config(args)
    sc = cfg.scenario_config()
    os.makedirs(args.out, exist_ok=True)
    truth = generate_truth(sc)
    frames = generate_detections(truth, sc)
    write_trackset(os.path.join(args.out, "truth.json"), truth)
    write_detections(os.path.join(args.out, "detections.jsonl"), frames)
    log.info("simulated %d frames, %d labels", len(frames), len(truth.tracks))
    return 0


def _tracks_from_summaries(summaries) -> TrackSet:
    tracks, modes = {}, {}
    for s in summaries:
        for lab, st in s.estimate.states.items():
            tracks.setdefault(lab, {})[s.frame] = np.asarray(st.mean[:2], float)
            modes.setdefault(lab, {})[s.frame] = int(st.mode)
    return TrackSet(tracks, modes=modes)


def cmd_track(args) -> int:
    cfg = _config(args)
    _limit_threads(args.threads)
    models = cfg.models()
    fcfg = cfg.filter_config(args.variant)
    frames = read_detections(args.detections)
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    summaries = run_sequence(frames, models, fcfg)
    log.info("%s filter: %d frames in %.1f s", fcfg.variant, len(frames), time.perf_counter() - t0)
    tracks = _tracks_from_summaries(summaries)
    write_trackset(os.path.join(args.out, "tracks.json"), tracks)
    rows = []
    for s in summaries:
        dv, sp = s.division_pmf, s.spawning_pmf
        rows.append([s.frame, s.n_hypotheses, s.cardinality_mean, s.cardinality_std, len(s.estimate.labels),
                     float(np.arange(len(dv)) @ dv), float(1.0 - dv[0]) if len(dv) else 0.0,
                     float(np.arange(len(sp)) @ sp), s.clutter_estimate, s.mean_detection])
    _write_csv(os.path.join(args.out, "stats.csv"), STATS_COLUMNS, rows)
    with open(os.path.join(args.out, "config_used.yaml"), "w") as fh:
        fh.write(dump_config(cfg))
    if not args.no_plots and summaries:
        _track_figures(args.out, _read_csv(os.path.join(args.out, "stats.csv")), tracks)
    return 0


def _track_figures(out, stats, tracks, truth=None) -> None:
    from . import plotting

    f = stats["frame"]
    true_n = [truth.count(int(k)) for k in f] if truth is not None else None
    plotting.plot_cardinality(f, stats["cardinality_mean"], stats["cardinality_std"],
                              os.path.join(out, "cardinality.png"), truth=true_n)
    plotting.plot_background(f, stats["clutter_estimate"], stats["mean_detection"],
                             os.path.join(out, "background.png"))
    true_div = division_counts(truth, [int(k) for k in f]) if truth is not None else None
    plotting.plot_divisions(f, stats["division_mean"], os.path.join(out, "divisions.png"), truth=true_div)
    if tracks.tracks:
        plotting.plot_tracks(tracks, os.path.join(out, "tracks.png"), "estimated tracks")


def cmd_evaluate(args) -> int:
    from . import plotting

    cfg = _config(args)
    m = cfg.metrics
    est = read_trackset(args.tracks)
    truth = read_trackset(args.truth)
    os.makedirs(args.out, exist_ok=True)
    frames = sorted(set(est.frames) | set(truth.frames))
    o1 = [ospa(est.at(k)[1], truth.at(k)[1], m.ospa_p, m.ospa_c) for k in frames]
    o2 = ospa2(est, truth, m.ospa2_window, m.ospa_p, m.ospa_c, frames)
    err, mean_err = mitotic_event_error(est, truth, frames)
    _write_csv(os.path.join(args.out, "ospa.csv"), ["frame", "ospa"], zip(frames, o1))
    _write_csv(os.path.join(args.out, "ospa2.csv"), ["frame", "ospa2"], zip(frames, o2))
    est_div, true_div = division_counts(est, frames), division_counts(truth, frames)
    _write_csv(os.path.join(args.out, "mitosis_error.csv"), ["frame", "estimated", "true", "error"],
               zip(frames, est_div, true_div, err))
    counts = tra_counts(est, truth, m.tra_radius)
    report = {"tra": tra_score(est, truth, m.tra_radius), "counts": counts,
              "mean_ospa": float(np.mean(o1)) if o1 else 0.0,
              "mean_ospa2": float(np.mean(o2)) if len(o2) else 0.0,
              "mean_abs_mitosis_error": mean_err}
    with open(os.path.join(args.out, "tra.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if not args.no_plots and frames:
        plotting.plot_errors(frames, {"OSPA": o1, "OSPA(2)": o2}, os.path.join(args.out, "ospa.png"),
                             ylabel="distance")
        plotting.plot_tracks(truth, os.path.join(args.out, "truth_tracks.png"), "true tracks")
    print(json.dumps({k: report[k] for k in ("tra", "mean_ospa", "mean_ospa2", "mean_abs_mitosis_error")}))
    return 0


def cmd_stats(args) -> int:
    """Summarize a tracking output directory and (re)draw its figures."""
    path = os.path.join(args.dir, "stats.csv")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    stats = _read_csv(path)
    tracks = read_trackset(os.path.join(args.dir, "tracks.json"))
    truth = read_trackset(args.truth) if args.truth else None
    summary = {"frames": int(len(stats.get("frame", ()))), "labels": len(tracks.tracks)}
    if stats:
        summary.update({
            "mean_cardinality": float(np.mean(stats["cardinality_mean"])),
            "expected_divisions": float(np.sum(stats["division_mean"])),
            "mean_clutter_estimate": float(np.mean(stats["clutter_estimate"])),
            "mean_detection": float(np.nanmean(stats["mean_detection"])) if np.any(np.isfinite(stats["mean_detection"])) else None,
        })
        if truth is not None:
            true_n = np.array([truth.count(int(k)) for k in stats["frame"]])
            summary["mean_abs_cardinality_error"] = float(np.mean(np.abs(stats["cardinality_mean"] - true_n)))
        if not args.no_plots:
            _track_figures(args.dir, stats, tracks, truth)
    with open(os.path.join(args.dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(json.dumps(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lineage-rfs", description="Lineage-labelled multi-object cell tracking.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="YAML run configuration (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("simulate", help="generate ground truth and detections")
    common(s)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("track", help="run a filter over a detection file")
    common(t)
    t.add_argument("--detections", required=True, help="detections.jsonl")
    t.add_argument("--variant", choices=("pa", "ua", "ef"), help="filter variant (overrides the config)")
    t.add_argument("--threads", type=int, help="cap on worker threads")
    t.add_argument("--no-plots", action="store_true", help="skip the figures")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("evaluate", help="score tracks against ground truth")
    common(e)
    e.add_argument("--tracks", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--no-plots", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    st = sub.add_parser("stats", help="summarize a tracking output directory")
    st.add_argument("dir", help="directory written by 'track'")
    st.add_argument("--truth", help="optional truth.json for reference curves")
    st.add_argument("--no-plots", action="store_true")
    st.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DegenerateDensityError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, FileFormatError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
