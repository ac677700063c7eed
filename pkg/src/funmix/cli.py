"""Command-line entry point ``funmix``.

Subcommands::

    funmix simulate   --config C --out DIR [--seed N]
    funmix fit-gibbs  --config C --data FILE --out DIR [--seed N]
    funmix fit-vb     --config C --data FILE --out DIR [--seed N]
    funmix bench      --config C --out DIR [--seed N] [--threads N]
    funmix summarize  --out DIR [--data FILE]

Command-line flags override the matching config keys.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import io, runner
from .config import RunConfig, load_config
from .errors import FunmixError


def _limit_threads(n: int | None):
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(n))


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        changes["threads"] = args.threads
    if getattr(args, "data", None):
        changes["data"] = str(args.data)
    if getattr(args, "out", None):
        changes["output"] = str(args.out)
    return cfg.updated(**changes) if changes else cfg


def cmd_simulate(args) -> int:
    cfg = _config(args)
    path = runner.save_simulation(runner.simulate(cfg), cfg.output)
    print(f"wrote {path}")
    return 0


def _cmd_fit(args, engine: str) -> int:
    cfg = _config(args).updated(engine=engine)
    result = runner.run(cfg)
    s = result.summary
    print(f"{cfg.model}/{engine}: {len(s.params)} parameters, {s.elapsed:.2f} s -> {cfg.output}")
    for row in s.params[:3 if cfg.model == "normal" else 2]:
        print(f"  {row.name:>8s} mean {row.mean:9.4f}  [{row.lower:9.4f}, {row.upper:9.4f}]")
    return 0


def cmd_fit_gibbs(args) -> int:
    return _cmd_fit(args, "gibbs")


def cmd_fit_vb(args) -> int:
    return _cmd_fit(args, "vb")


def cmd_bench(args) -> int:
    cfg = _config(args)
    cells = runner.bench(cfg)
    runner.save_bench(cells, cfg.output)
    sys.stdout.write(runner.format_bench(cells))
    return 0


def cmd_summarize(args) -> int:
    """Recompute the summary of a stored sampler run and print the parameter table."""
    out = Path(args.out)
    manifest = io.read_manifest(out)
    if manifest["meta"].get("engine") != "gibbs":
        for row in io.read_summary_table(out):
            print(f"{row['name']:>16s} {row['mean']:12.5g} {row['sd']:12.5g} "
                  f"[{row['lower']:.5g}, {row['upper']:.5g}]")
        return 0
    data = args.data or manifest.get("data")
    y = io.load_dataset(data).y if data else None
    trace = io.load_trace(out, manifest["meta"])
    summary = runner.summarize_trace(trace, y, manifest["config"].get("level", 0.95))
    for row in summary.params:
        print(f"{row.name:>16s} {row.mean:12.5g} {row.sd:12.5g} [{row.lower:.5g}, {row.upper:.5g}]")
    for t, obs, rep, pval in summary.ppc:
        print(f"PPC t={t:g}: observed {obs:.4f}, replicated {rep:.4f}, p={pval:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funmix", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, threads=False):
        p.add_argument("--config", type=Path, help="key=value run configuration")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int)
        if data:
            p.add_argument("--data", type=Path, help="dataset CSV")
        if threads:
            p.add_argument("--threads", type=int, help="worker processes")

    p = sub.add_parser("simulate", help="generate a simulated dataset")
    common(p, threads=True)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("fit-gibbs", help="fit with the Gibbs sampler")
    common(p, data=True, threads=True)
    p.set_defaults(func=cmd_fit_gibbs)
    p = sub.add_parser("fit-vb", help="fit with coordinate-ascent variational inference")
    common(p, data=True, threads=True)
    p.set_defaults(func=cmd_fit_vb)
    p = sub.add_parser("bench", help="timing table over sizes, engines and models")
    common(p, threads=True)
    p.set_defaults(func=cmd_bench)
    p = sub.add_parser("summarize", help="summarize a stored run")
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.add_argument("--data", type=Path)
    p.add_argument("--config", type=Path, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _limit_threads(getattr(args, "threads", None))
    try:
        return args.func(args)
    except FunmixError as exc:
        print(f"funmix: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
