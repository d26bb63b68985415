"""Command line entry point: ``emppi run | compare | ablate``.

Exit codes: 0 on success, 2 for usage or configuration errors, 3 when
inputs cannot be read or outputs cannot be written.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext

import tomli

from . import config as cfgmod
from .harness import IoFailure, run_ablation, run_comparison, run_episode, write_logs

EXIT_CONFIG = 2
EXIT_IO = 3

log = logging.getLogger("emppi")


def parse_list(text: str, cast=float) -> list:
    items = [s for s in re.split(r"[,;:\s]+", text.strip()) if s]
    if not items:
        raise ValueError("empty list")
    return [cast(s) for s in items]


def parse_wrong_theta(text: str):
    """``"2.0,1.0,0.1"`` (all parameters in model order) or ``"mass=2.0,length=1.2"``."""
    if "=" not in text:
        return parse_list(text)
    out = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        out[name.strip()] = float(value)
    return out


_SWEEP_RE = re.compile(r"([NK])\s*=\s*([0-9][0-9,;:\s]*?)(?=\s*,\s*[NK]\s*=|\s*$)")


def parse_sweep(text: str) -> tuple[list[int], list[int]]:
    """``"N=1,5,10,K=1,4"`` -> ``([1, 5, 10], [1, 4])``.  Either axis may be omitted."""
    found = {key: parse_list(vals, int) for key, vals in _SWEEP_RE.findall(text)}
    if not found or _SWEEP_RE.sub("", text).strip(" ,"):
        raise ValueError(f"cannot parse sweep {text!r}")
    return found.get("N", []), found.get("K", [])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emppi", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment TOML file")
        sp.add_argument("--out", required=True, help="output directory (files are overwritten)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for rollout evaluation")
        sp.add_argument("--no-plots", action="store_true", help="skip the PNG figures")
        sp.add_argument("--record-timing", action="store_true",
                        help="fill cycle_ms with wall-clock planning time (makes output non-reproducible)")

    sp = sub.add_parser("run", help="one closed-loop episode")
    common(sp)
    sp.add_argument("--seed", type=int, default=None, help="episode seed (default: controller.seed)")

    sp = sub.add_parser("compare", help="EMPPI vs MPPI with true and wrong models")
    common(sp)
    sp.add_argument("--trials", type=int, required=True)
    sp.add_argument("--wrong-theta", default=None, help="wrong parameter vector, LIST or name=value pairs")

    sp = sub.add_parser("ablate", help="success rate over an N x K grid")
    common(sp)
    sp.add_argument("--sweep", required=True, help="e.g. N=1,5,10,K=1,4")
    sp.add_argument("--trials", type=int, required=True)
    return p


def _execute(args) -> int:
    try:
        config = cfgmod.load(args.config)
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (tomli.TOMLDecodeError, cfgmod.ConfigError, cfgmod.InvalidPrior, ValueError, TypeError) as exc:
        print(f"error: invalid config {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    pool = ThreadPoolExecutor(args.threads) if args.threads > 1 else nullcontext()
    with pool as executor:
        kw = dict(executor=executor, chunks=args.threads, record_timing=args.record_timing)
        if args.command == "run":
            seed = config.controller.seed if args.seed is None else args.seed
            result = run_episode(config, seed, **kw)
            log.info("seed %d: success=%s steps=%d", seed, result.success, len(result))
        elif args.command == "compare":
            wrong = parse_wrong_theta(args.wrong_theta) if args.wrong_theta else None
            result, _ = run_comparison(config, args.trials, wrong, **kw)
            for name, arm in result.arms.items():
                log.info("%s: success rate %.2f", name, arm.success_rate)
        else:
            n_values, k_values = parse_sweep(args.sweep)
            result = run_ablation(config, n_values or [config.controller.n_particles],
                                  k_values or [config.controller.n_rollouts], args.trials, **kw)

    paths = write_logs(result, args.out, config)
    if not args.no_plots:
        from .plots import render

        try:
            paths += render(result, args.out)
        except OSError as exc:
            raise IoFailure(f"cannot write figures to {args.out}: {exc}") from exc
    for path in paths:
        print(path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _execute(args)
    except IoFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (cfgmod.ConfigError, cfgmod.InvalidPrior, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
