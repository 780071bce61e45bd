"""``facecap`` command-line tool.

Subcommands: filter, evaluate, distill, bench, synth.  Config keys can be
given as ``--section.key value`` flags or in a ``--config`` key=value file.
Data goes to stdout (or ``--output``), diagnostics to stderr.

Exit codes: 0 success, 1 input data error, 2 configuration error,
3 numerical divergence.
"""

import argparse
import contextlib
import json
import logging
import sys

import numpy as np

from . import __version__
from .blendshape import ExpressionWeights, clamp_project, evaluate, load_basis
from .config import PARSERS, CliConfig, load_config_file
from .errors import (
    ConfigError,
    DimensionMismatch,
    Divergence,
    FacecapError,
)
from .pipeline import (
    FORMATS,
    WAVES,
    StreamReader,
    SynthSpec,
    benchmark,
    channel_names,
    evaluate_run,
    run_stream,
    stack_channels,
    synth_stream,
    write_curves,
    write_stream,
)
from .regressor import run_experiment

log = logging.getLogger("facecap")

EXIT_OK, EXIT_DATA, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@contextlib.contextmanager
def _open_in(path):
    if path in (None, "-"):
        yield sys.stdin
    else:
        with open(path) as fh:
            yield fh


@contextlib.contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


def split_config_flags(argv):
    """Pull ``--section.key value`` (or ``--section.key=value``) pairs out of ``argv``."""
    rest, flags = [], {}
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "." in tok.split("=", 1)[0]:
            key = tok[2:]
            if "=" in key:
                key, value = key.split("=", 1)
            else:
                if i + 1 >= len(argv):
                    raise ConfigError(f"flag --{key} needs a value")
                value = argv[i + 1]
                i += 1
            if key not in PARSERS:
                raise ConfigError(f"unknown config key {key!r}")
            flags[key] = value
        else:
            rest.append(tok)
        i += 1
    return rest, flags


def _config(args, flags):
    file_values = load_config_file(args.config) if args.config else {}
    return CliConfig.merge(file_values, flags)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_filter(args, cfg):
    hybrid = cfg.hybrid()
    with _open_in(args.input) as fh:
        reader = StreamReader(fh, args.format)
        samples = list(reader)
    n, L = reader.n_weights or 0, reader.n_landmarks or 0
    filtered, timings = run_stream(samples, hybrid, n, L, project=not args.no_project,
                                   threads=args.threads)
    with _open_out(args.output) as out:
        if reader.has_header:
            write_stream(out, filtered, args.format, n, L)
    if args.report or args.curves:
        reference = None
        if args.reference:
            with _open_in(args.reference) as fh:
                ref = list(StreamReader(fh, args.format))
            reference = stack_channels(ref)
        raw = stack_channels(samples).reshape(len(samples), n + 2 * L)
        fil = stack_channels(filtered).reshape(len(samples), n + 2 * L)
        if args.report:
            rep = evaluate_run(raw, fil, timings, reference)
            rep.extra["mode"] = hybrid.mode
            with _open_out(args.report) as fh:
                fh.write(rep.to_json() + "\n")
        if args.curves:
            write_curves(args.curves, raw, fil, channel_names(n, L))
    return EXIT_OK


def cmd_evaluate(args, cfg):
    basis = load_basis(args.basis)
    with _open_in(args.input) as fh:
        reader = StreamReader(fh, args.format)
        if reader.n_weights is not None and reader.n_weights != basis.n:
            raise DimensionMismatch(
                f"stream has {reader.n_weights} weights but basis has {basis.n} targets"
            )
        with _open_out(args.output) as out:
            if args.out_format == "csv":
                cols = ["frame"]
                for v in range(basis.n_vertices):
                    cols += [f"v{v}x", f"v{v}y", f"v{v}z"]
                out.write(",".join(cols) + "\n")
            for s in reader:
                w = clamp_project(s.weights) if args.project else s.weights
                mesh = evaluate(basis, ExpressionWeights(w))
                if args.out_format == "csv":
                    out.write(",".join([str(s.frame), *(repr(float(x)) for x in mesh.ravel())]) + "\n")
                else:
                    out.write(json.dumps({"frame": s.frame, "vertices": mesh.tolist()}) + "\n")
    return EXIT_OK


def cmd_distill(args, cfg):
    seed = cfg["train.seed"] if args.seed is None else args.seed
    mu = cfg["distill.mu"]
    report = run_experiment(
        n_samples=cfg["data.n_samples"],
        p_corrupt=cfg["data.p_corrupt"],
        seed=seed,
        schedule=cfg.schedule(),
        mu=None if mu == "auto" else mu,
        v_penalty=cfg["distill.v"],
        b_margin=cfg["distill.b"],
    )
    soft = cfg.soft_targets()
    report.extra.update({"T": soft.T, "alpha": soft.alpha, "base_lr": cfg["train.base_lr"],
                         "batch": cfg["train.batch"]})
    values = [report.ard_mse, report.baseline_mse, report.teacher_mse]
    if not all(np.isfinite(values)):
        raise Divergence(report.epochs, -1, values)
    with _open_out(args.output) as out:
        out.write(report.to_json() + "\n")
    return EXIT_OK


def cmd_bench(args, cfg):
    res = benchmark(args.frames, args.weights, args.landmarks, cfg.hybrid(),
                    threads=args.threads, seed=args.seed or 0, repeats=args.repeats)
    with _open_out(args.output) as out:
        out.write(json.dumps(res, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_synth(args, cfg):
    try:
        spec = SynthSpec(wave=args.wave, sigma=args.sigma, frames=args.frames,
                         n_weights=args.weights, n_landmarks=args.landmarks, fps=args.fps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    noisy, clean = synth_stream(spec, args.seed or 0)
    with _open_out(args.output) as out:
        write_stream(out, noisy, args.format, spec.n_weights, spec.n_landmarks)
    if args.clean:
        with _open_out(args.clean) as out:
            write_stream(out, clean, args.format, spec.n_weights, spec.n_landmarks)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="facecap", description="Facial-capture post-processing toolkit.")
    p.add_argument("--version", action="version", version=f"facecap {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log debug diagnostics")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, fmt=True):
        sp.add_argument("--config", metavar="PATH", help="key=value config file")
        sp.add_argument("--seed", type=int, default=None)
        if fmt:
            sp.add_argument("--format", choices=FORMATS, default="csv")

    sp = sub.add_parser("filter", help="smooth a frame stream")
    common(sp)
    sp.add_argument("-i", "--input", default="-")
    sp.add_argument("-o", "--output", default="-")
    sp.add_argument("--report", metavar="PATH", help="write smoothing metrics JSON")
    sp.add_argument("--reference", metavar="PATH", help="clean stream for lag/peak metrics")
    sp.add_argument("--curves", metavar="DIR", help="write per-channel raw,filtered CSVs")
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--no-project", action="store_true",
                    help="skip mapping weights onto the feasible set")
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("evaluate", help="blend meshes from a weight stream")
    common(sp)
    sp.add_argument("--basis", required=True)
    sp.add_argument("-i", "--input", default="-")
    sp.add_argument("-o", "--output", default="-")
    sp.add_argument("--out-format", choices=FORMATS, default="jsonl")
    sp.add_argument("--project", action="store_true",
                    help="clamp/rescale raw weights instead of rejecting them")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("distill", help="run the ARD vs plain-regression experiment")
    common(sp, fmt=False)
    sp.add_argument("-o", "--output", default="-")
    sp.set_defaults(func=cmd_distill)

    sp = sub.add_parser("bench", help="measure filter throughput")
    common(sp, fmt=False)
    sp.add_argument("--frames", type=int, default=2000)
    sp.add_argument("--weights", type=int, default=52)
    sp.add_argument("--landmarks", type=int, default=70)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("-o", "--output", default="-")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("synth", help="generate noisy and clean test streams")
    common(sp)
    sp.add_argument("--wave", choices=WAVES, default="pulse")
    sp.add_argument("--sigma", type=float, default=0.05)
    sp.add_argument("--frames", type=int, default=600)
    sp.add_argument("--weights", type=int, default=52)
    sp.add_argument("--landmarks", type=int, default=70)
    sp.add_argument("--fps", type=float, default=60.0)
    sp.add_argument("-o", "--output", default="-")
    sp.add_argument("--clean", metavar="PATH", help="also write the noiseless stream")
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, flags = split_config_flags(argv)
        args = build_parser().parse_args(rest)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.WARNING,
            format="facecap: %(levelname)s: %(message)s",
            stream=sys.stderr,
        )
        cfg = _config(args, flags)
        return args.func(args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, DimensionMismatch) as exc:
        print(f"facecap: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Divergence as exc:
        print(f"facecap: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FacecapError, OSError) as exc:
        print(f"facecap: input error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
