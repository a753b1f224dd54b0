"""Command-line driver.

    adnn generate-data --config exp.cfg
    adnn train-offline --config exp.cfg
    adnn run --method adnn --config exp.cfg --set tol=0.05
    adnn summarize --config exp.cfg
    adnn kl-cache --set n_modes=111

Exit status: 0 on success, 2 for configuration errors, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import experiment as ex
from .field import kl_build, kl_cache_path
from .mcmc import RefinementError
from .nn import DivergenceError
from .pde import InverseCrimeError, SolverError

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_config(args, extra=()):
    text = ""
    if args.config:
        with open(args.config) as f:
            text = f.read()
    overrides = list(args.set or []) + list(extra)
    return ex.parse_config(text, overrides)


def cmd_generate_data(args):
    cfg = _load_config(args)
    setup = ex.write_data(cfg)
    print(f"wrote {setup.observation.data.size} observations to {cfg.output_dir}/data.csv")


def cmd_train_offline(args):
    cfg = _load_config(args)
    model, evals = ex.train_offline(cfg)
    print(f"trained low-fidelity network {model.net.dims} on {evals} solves; "
          f"final loss {model.net.history[-1]:.3e}")


def cmd_run(args):
    extra = [f"method={args.method}"] if args.method else []
    cfg = _load_config(args, extra)
    result = ex.run_experiment(cfg)
    print(json.dumps(result.metrics, indent=2, sort_keys=True))


def cmd_summarize(args):
    cfg = _load_config(args)
    samples = ex.read_samples(os.path.join(cfg.output_dir, "samples.csv"))
    setup = ex.Setup(cfg)
    summary = ex.summarize(samples, cfg.burn_in, setup.log_kappa, ex._reference(cfg, setup))
    tag = f"# config_hash={cfg.digest()} seed={cfg.seed}"
    ex.write_fields(cfg.output_dir, summary, cfg.inversion_resolution, tag,
                    log_fields=cfg.example == "kl_field")
    print(json.dumps({"rel_error": summary["rel_error"], "n_kept": summary["n_kept"]}))


def cmd_kl_cache(args):
    cfg = _load_config(args)
    cache = cfg.kl_cache_dir or os.path.join(cfg.output_dir, "kl_cache")
    field = kl_build(cfg.inversion_resolution, cfg.n_modes, cfg.length_scale, cfg.kl_variance,
                     cache_dir=cache)
    path = kl_cache_path(cache, cfg.inversion_resolution, cfg.length_scale, cfg.kl_variance,
                         cfg.n_modes)
    print(f"{path}: {field.dim} modes, lambda_1={field.eigenvalues[0]:.6g}")


def build_parser():
    parser = argparse.ArgumentParser(prog="adnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "generate-data": cmd_generate_data,
        "train-offline": cmd_train_offline,
        "run": cmd_run,
        "summarize": cmd_summarize,
        "kl-cache": cmd_kl_cache,
    }
    for name, func in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a configuration key (repeatable)")
        if name == "run":
            p.add_argument("--method", choices=ex.METHODS)
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ex.ConfigError, InverseCrimeError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, DivergenceError, RefinementError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
