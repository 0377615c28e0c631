"""Command-line interface.

Subcommands: ``simulate`` (replicated synthetic scenarios), ``fit``
(estimate one user-supplied graph), ``classify`` (noisy-network
classification sweep), and ``diagnose`` (multi-chain convergence
checks).  Every run requires --seed and writes CSV/JSON reports, plus
figures unless --no-figures is given.  On failure a machine-readable
error record is printed to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import RunConfig
from .graphio import load_edge_list
from .harness import run_diagnose, run_fit, run_network_pipeline, run_scenario

SCENARIO_PRESETS = {
    "rdpg_curve": {"weight": "rdpg", "theta_radius": 1.0, "n": 800, "d": 1},
    "completion": {"weight": "completion", "theta_radius": 1.2, "n": 400, "d": 1},
    "file": {"weight": "constant", "theta_radius": 2.0, "n": 2, "d": 1},
}

CONFIG_FLAGS = ("n", "d", "p", "sigma", "v", "weight", "criterion",
                "theta_radius", "burnin", "samples", "proposal_scale",
                "chains", "replicates", "output_dir")


def _add_config_flags(sub, scenario_choices=None):
    if scenario_choices:
        sub.add_argument("--scenario", choices=scenario_choices)
    sub.add_argument("--config", help="JSON config file; flags override its values")
    sub.add_argument("--seed", type=int, required=True,
                     help="master seed (required for reproducible runs)")
    sub.add_argument("--out", dest="output_dir", help="output directory")
    sub.add_argument("--n", type=int)
    sub.add_argument("--d", type=int)
    sub.add_argument("--p", type=float)
    sub.add_argument("--sigma", type=float)
    sub.add_argument("--v", type=float)
    sub.add_argument("--weight",
                     choices=["constant", "rdpg", "completion",
                              "inverse_variance", "noisy_rdpg"])
    sub.add_argument("--criterion", choices=["M", "GMM", "ETEL", "all"])
    sub.add_argument("--theta-radius", dest="theta_radius", type=float)
    sub.add_argument("--burnin", type=int)
    sub.add_argument("--samples", type=int)
    sub.add_argument("--proposal-scale", dest="proposal_scale", type=float)
    sub.add_argument("--chains", type=int)
    sub.add_argument("--replicates", type=int)
    sub.add_argument("--adapt", dest="adapt", action="store_true", default=None)
    sub.add_argument("--no-adapt", dest="adapt", action="store_false")
    sub.add_argument("--workers", type=int, default=1)
    sub.add_argument("--figures", dest="figures", action="store_true", default=True)
    sub.add_argument("--no-figures", dest="figures", action="store_false")


def build_config(args, scenario: str) -> RunConfig:
    """Merge preset defaults, an optional config file, and CLI flags."""
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            merged = dict(json.loads(fh.read()))
    else:
        merged = {"scenario": scenario, **SCENARIO_PRESETS[scenario]}
    merged["scenario"] = scenario
    merged["seed"] = args.seed
    if getattr(args, "adapt", None) is not None:
        merged["adapt"] = args.adapt
    for key in CONFIG_FLAGS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return RunConfig(**{**_defaults(), **merged})


def _defaults() -> dict:
    import dataclasses

    return {f.name: f.default for f in dataclasses.fields(RunConfig)}


def _parse_int_list(text):
    return [int(x) for x in text.split(",") if x != ""]


def _parse_float_list(text):
    return [float(x) for x in text.split(",") if x != ""]


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eigeninfer",
        description="Row-wise estimation and generalized posterior "
                    "inference for low-rank symmetric matrices",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="replicated synthetic scenarios")
    _add_config_flags(sim, scenario_choices=["rdpg_curve", "completion"])
    sim.set_defaults(scenario="rdpg_curve")

    fit = subs.add_parser("fit", help="estimate a user-supplied edge list")
    fit.add_argument("--input", required=True, help="edge-list file")
    fit.add_argument("--index-base", type=int, default=1, choices=[0, 1])
    fit.add_argument("--n-hint", type=int, default=None,
                     help="expected vertex count")
    _add_config_flags(fit)

    cls = subs.add_parser("classify", help="noisy-network classification sweep")
    cls.add_argument("--input", required=True, help="edge-list file with labels")
    cls.add_argument("--index-base", type=int, default=1, choices=[0, 1])
    cls.add_argument("--n-hint", type=int, default=None)
    cls.add_argument("--v-values", type=_parse_float_list, default=None,
                     help="comma-separated contamination levels")
    cls.add_argument("--knn-repeats", type=int, default=100)
    _add_config_flags(cls)

    diag = subs.add_parser("diagnose", help="multi-chain convergence diagnostics")
    diag.add_argument("--input", default=None, help="edge-list file (optional)")
    diag.add_argument("--index-base", type=int, default=1, choices=[0, 1])
    diag.add_argument("--n-hint", type=int, default=None)
    diag.add_argument("--rows", type=_parse_int_list, default=None,
                      help="comma-separated row indices")
    _add_config_flags(diag, scenario_choices=["rdpg_curve", "completion"])
    diag.set_defaults(scenario="rdpg_curve")

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            config = build_config(args, args.scenario)
            out = run_scenario(config, workers=args.workers, figures=args.figures)
        elif args.command == "fit":
            config = build_config(args, "file")
            graph = load_edge_list(args.input, n_hint=args.n_hint,
                                   index_base=args.index_base)
            out = run_fit(config, graph, workers=args.workers,
                          figures=args.figures)
        elif args.command == "classify":
            config = build_config(args, "file")
            graph = load_edge_list(args.input, n_hint=args.n_hint,
                                   index_base=args.index_base)
            out = run_network_pipeline(config, graph, v_values=args.v_values,
                                       knn_repeats=args.knn_repeats,
                                       workers=args.workers,
                                       figures=args.figures)
        else:
            if args.input:
                config = build_config(args, "file")
                graph = load_edge_list(args.input, n_hint=args.n_hint,
                                       index_base=args.index_base)
            else:
                config = build_config(args, args.scenario)
                graph = None
            if config.chains < 2:
                config = RunConfig(**{**json.loads(config.to_json()), "chains": 4})
            out = run_diagnose(config, graph=graph, rows=args.rows,
                               workers=args.workers, figures=args.figures)
    except Exception as exc:  # surface a machine-readable record
        record = {"error": type(exc).__name__, "message": str(exc),
                  "command": getattr(args, "command", None)}
        print(json.dumps(record), file=sys.stderr)
        return 1

    paths = {k: v for k, v in out.items() if isinstance(v, str)}
    print(json.dumps({"status": "ok", "outputs": paths}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
