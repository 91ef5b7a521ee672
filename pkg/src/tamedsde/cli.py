"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 divergence or undefined rate,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import config as C
from . import diagnostics, harness
from .schemes import ConfigurationError, SchemeError
from .taming import TamingParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

RATE_COLUMNS = ("scheme", "model", "level", "h", "error_Lr", "r", "paths", "diverged")
MOMENT_COLUMNS = ("t", "p", "moment")
DENSITY_COLUMNS = ("bin_center", "empirical", "analytic")
DEFECT_COLUMNS = ("level", "h", "drift_defect", "diffusion_defect", "exp_weight_log", "lhs",
                  "implied_constant")


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def write_csv(path: str, columns: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def rate_svg(hs, errors, title: str = "") -> str:
    """Minimal log2-log2 plot of ``errors`` against ``hs`` with slope-1 and slope-1/2 guides."""
    x = np.log2(np.asarray(hs, dtype=float))
    y = np.log2(np.asarray(errors, dtype=float))
    ok = np.isfinite(y)
    x, y = x[ok], y[ok]
    guides = {1.0: y[-1] + 1.0 * (x - x[-1]), 0.5: y[-1] + 0.5 * (x - x[-1])}
    ys = np.concatenate([y] + list(guides.values()))
    x0, x1 = float(x.min()) - 0.5, float(x.max()) + 0.5
    y0, y1 = float(ys.min()) - 0.5, float(ys.max()) + 0.5
    W, H, pad = 480, 360, 48

    def px(a):
        return pad + (a - x0) / (x1 - x0) * (W - 2 * pad)

    def py(b):
        return H - pad - (b - y0) / (y1 - y0) * (H - 2 * pad)

    def poly(xs, bs, style):
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, bs))
        return f'<polyline points="{pts}" fill="none" {style}/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect x="{pad}" y="{pad}" width="{W - 2 * pad}" height="{H - 2 * pad}" '
        'fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-size="12">log2 h</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {H / 2})">log2 error</text>',
        f'<text x="{W / 2}" y="{pad - 14}" text-anchor="middle" font-size="13">{title}</text>',
        poly(x, guides[1.0], 'stroke="gray" stroke-dasharray="6 3"'),
        poly(x, guides[0.5], 'stroke="gray" stroke-dasharray="2 3"'),
        poly(x, y, 'stroke="navy"'),
    ]
    parts += [f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="navy"/>'
              for a, b in zip(x, y)]
    parts.append(f'<text x="{W - pad - 4}" y="{pad + 16}" text-anchor="end" font-size="11">'
                 'dashed: slope 1, dotted: slope 1/2</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _run_rate(cfg: C.ExperimentConfig, model, out: str, threads: int, svg: bool) -> dict:
    reference = None
    if model.name == "gbm":
        mu, sigma = model.params["mu"], model.params["sigma"]
        x0 = float(model.x0[0])

        def reference(inc):
            return harness.exact_reference_gbm(mu, sigma, x0, inc, cfg.T)

    rep = harness.strong_error(model, cfg.scheme["name"], cfg.ref_level, cfg.levels, cfg.paths,
                               r=cfg.r, seed=cfg.seed, T=cfg.T, threads=threads,
                               reference=reference, delta=cfg.delta, gamma=cfg.gamma)
    write_csv(os.path.join(out, "rates.csv"), RATE_COLUMNS, rep.rows())
    if svg:
        with open(os.path.join(out, "rates.svg"), "w", encoding="utf-8") as fh:
            fh.write(rate_svg(rep.hs, rep.errors, f"{rep.scheme} on {rep.model}"))
    return dict(slope=rep.slope, residual=rep.residual, diverged=rep.diverged, note=rep.note)


def _run_longtime(cfg: C.ExperimentConfig, model, out: str, threads: int, svg: bool) -> dict:
    series = harness.longtime_moments(model, cfg.scheme["name"], cfg.h, cfg.T, cfg.paths,
                                      orders=cfg.orders, seed=cfg.seed, threads=threads,
                                      stride=cfg.stride, delta=cfg.delta, gamma=cfg.gamma)
    write_csv(os.path.join(out, "moments.csv"), MOMENT_COLUMNS, series.rows())
    terminal = series.terminal_norms[np.isfinite(series.terminal_norms)]
    summary = dict(median_terminal_norm=float(np.median(terminal)) if terminal.size else None,
                   lost_paths=int(series.lost[-1]))
    for p in series.orders:
        summary[f"max_moment_{p:g}"] = float(np.nanmax(series.moments[p]))
    return summary


def _run_density(cfg: C.ExperimentConfig, model, out: str, threads: int, svg: bool) -> dict:
    rep = harness.stationary_density_check(model, cfg.scheme["name"], cfg.h, cfg.T_burn,
                                           cfg.T - cfg.T_burn, cfg.bins, cfg.paths,
                                           seed=cfg.seed, threads=threads, every=cfg.every,
                                           delta=cfg.delta)
    write_csv(os.path.join(out, "density.csv"), DENSITY_COLUMNS, rep.rows())
    return dict(l1=rep.l1, samples=rep.samples)


def _run_diagnostics(cfg: C.ExperimentConfig, model, out: str, threads: int, svg: bool) -> dict:
    if cfg.scheme["name"] != "sitem":
        raise C.ConfigError("the diagnostics experiment needs scheme.name = sitem",
                            cfg.lines.get("scheme.name"))
    study = diagnostics.defect_integrals(model, cfg.ref_level, cfg.levels, cfg.paths,
                                         params=TamingParams(cfg.delta),
                                         seed=cfg.seed, T=cfg.T, p=cfg.p, q=cfg.q,
                                         threads=threads)
    write_csv(os.path.join(out, "defects.csv"), DEFECT_COLUMNS, study.rows())
    return dict(drift_slope=study.drift_slope, diffusion_slope=study.diffusion_slope,
                implied_constant_max=study.implied_constant_max, v=study.v,
                excluded=study.excluded)


RUNNERS = {"rate": _run_rate, "longtime": _run_longtime, "density": _run_density,
           "diagnostics": _run_diagnostics}


def run_config(cfg: C.ExperimentConfig, threads: int = 1, svg: bool = False,
               stream=sys.stderr) -> int:
    """Run one experiment; the manifest is written whatever the outcome."""
    out = cfg.output_dir
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out!r}: {exc}", file=stream)
        return EXIT_IO
    manifest = dict(version=__version__, config=C.serialize(cfg).splitlines(),
                    threads=threads, status="running")
    started = time.perf_counter()
    code = EXIT_OK
    try:
        model = C.build_model(cfg.model, cfg.lines)
        manifest["summary"] = RUNNERS[cfg.experiment](cfg, model, out, threads, svg)
        manifest["status"] = "ok"
    except (C.ConfigError, ConfigurationError, harness.CapabilityError) as exc:
        code, manifest["status"], manifest["reason"] = EXIT_CONFIG, "failed", str(exc)
    except (harness.RateUndefinedError, SchemeError, FloatingPointError) as exc:
        code, manifest["status"], manifest["reason"] = EXIT_RUNTIME, "failed", str(exc)
    except OSError as exc:
        code, manifest["status"], manifest["reason"] = EXIT_IO, "failed", str(exc)
    manifest["wall_time_s"] = time.perf_counter() - started
    try:
        with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=stream)
        return EXIT_IO
    if code != EXIT_OK:
        print(f"error: {manifest['reason']}", file=stream)
    return code


def list_presets() -> str:
    width = max(len(n) for n in C.PRESETS)
    return "\n".join(f"{name:<{width}}  {C.PRESET_NOTES[name]}" for name in C.PRESETS) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tamedsde",
                                     description="Strong-rate, long-time and diagnostic "
                                                 "experiments for tamed SDE schemes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config")
    run.add_argument("--svg", action="store_true", help="also write a log-log rate plot")
    run.add_argument("--threads", type=int, default=1)

    preset = sub.add_parser("preset", help="run a built-in preset")
    preset.add_argument("name")
    preset.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    preset.add_argument("--print", dest="print_only", action="store_true",
                        help="print the resolved config instead of running it")
    preset.add_argument("--svg", action="store_true")
    preset.add_argument("--threads", type=int, default=1)

    sub.add_parser("list-presets", help="list the built-in presets")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-presets":
        sys.stdout.write(list_presets())
        return EXIT_OK
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            try:
                cfg = C.load(args.config)
            except OSError as exc:
                print(f"error: cannot read {args.config!r}: {exc}", file=sys.stderr)
                return EXIT_IO
        else:
            if args.name not in C.PRESETS:
                print(f"error: unknown preset {args.name!r}; known presets: "
                      f"{', '.join(C.PRESETS)}", file=sys.stderr)
                return EXIT_CONFIG
            text = C.apply_overrides(C.PRESETS[args.name], args.override)
            cfg = C.parse(text, source=f"preset {args.name}")
            if args.print_only:
                sys.stdout.write(C.serialize(cfg))
                return EXIT_OK
    except C.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code = run_config(cfg, threads=args.threads, svg=args.svg)
    if code == EXIT_OK:
        print(f"wrote results to {cfg.output_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
