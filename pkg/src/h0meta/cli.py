"""Command line interface: ``h0meta {fit,simulate,ppc,summarize}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import posterior_predictive_check, summarize
from .io import (
    DatasetFormatError,
    default_output_dir,
    fmt,
    load_dataset,
    load_run_config,
    read_draws,
    read_key_values,
    write_dataset,
    write_manifest,
    write_outputs,
    write_study_reports,
    write_summary,
)
from .likelihood import ConfigurationError, ErrorModel
from .mcmc import run_chains
from .simulate import PopulationSpec, generate_population, run_study

log = logging.getLogger("h0meta")


def _fit(args):
    cfg = load_run_config(
        args.config, seed=args.seed, error_model=args.error_model, n_chains=args.n_chains,
        n_iterations=args.n_iterations, n_jobs=args.n_jobs,
        h0_update_kind="repelling_attracting" if args.ram else None,
        h0_ridge_move=args.ridge_move,
        conservative_se=True if args.conservative_se else None)
    out = Path(args.out or cfg.output_dir or default_output_dir())
    lenses, diagnostics = load_dataset(args.dataset, cfg.conservative_se)
    for msg in diagnostics.messages():
        log.warning(msg)
    chains = run_chains(cfg.sampler_config(), lenses, cfg.error_model)
    summary = summarize(chains)
    config = asdict(cfg)
    config["error_model"] = ErrorModel.coerce(cfg.error_model).value
    config["dataset"] = str(args.dataset)
    write_outputs(chains, summary, None, out, config)
    h0 = summary["h0"]
    print(f"H0 = {h0.mean:.3f} +/- {h0.sd:.3f}  (R-hat {h0.rhat:.4f}, ESS {h0.ess:.0f})")
    print(f"outputs written to {out}")
    return 0


def _spec_from_file(path):
    values = read_key_values(path) if path else {}
    known = {f for f in PopulationSpec.__dataclass_fields__}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown population keys: {', '.join(unknown)}")
    kwargs = {}
    for key, text in values.items():
        default = PopulationSpec.__dataclass_fields__[key].default
        if isinstance(default, tuple):
            kwargs[key] = tuple(float(v) for v in text.split(","))
        elif isinstance(default, int):
            kwargs[key] = int(text)
        elif isinstance(default, float):
            kwargs[key] = float(text)
        else:
            kwargs[key] = text
    return PopulationSpec(**kwargs)


def _simulate(args):
    spec = _spec_from_file(args.spec)
    cfg = load_run_config(args.config, seed=args.seed, n_chains=args.n_chains,
                          n_iterations=args.n_iterations, n_jobs=args.n_jobs,
                          h0_update_kind="repelling_attracting" if args.ram else None,
                          h0_ridge_move=args.ridge_move)
    out = Path(args.out or cfg.output_dir or default_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(cfg.seed)
    dataset, truth = generate_population(spec, np.random.default_rng(root.spawn(1)[0]))
    write_dataset(dataset, out / "dataset.csv")
    manifest = {"seed": cfg.seed, "population": asdict(spec), "kappa_true": truth.kappa}
    if args.dataset_only:
        write_manifest(out, manifest)
        print(f"{sum(len(l.pairs) for l in dataset)} pairs written to {out / 'dataset.csv'}")
        return 0
    levels = [float(v) for v in args.levels.split(",")]
    models = [ErrorModel.coerce(m) for m in args.error_models.split(",")]
    cells = run_study(spec, levels, models, cfg.sampler_config(), seed=cfg.seed, dataset=dataset)
    write_study_reports(cells, out / "study_report.csv")
    manifest["sampler"] = asdict(cfg.sampler_config())
    write_manifest(out, manifest)
    for c in cells:
        r = c.report
        print(f"level {c.level:.2f} {c.error_model.value:>10}: H0 {r.h0_mean:.3f} ({r.h0_sd:.3f})"
              f"  bias {r.bias_pct:+.3f}%  CV {r.cv_pct:.3f}%  RMSE {r.rmse:.3f}"
              f"  R-hat {c.rhat_h0:.4f}")
    return 0


def _ppc(args):
    lenses, _ = load_dataset(args.dataset, args.conservative_se)
    chains = read_draws(args.chains_dir, args.error_model)
    result = posterior_predictive_check(chains, lenses, chains.error_model, args.seed, args.draws)
    out = Path(args.out or args.chains_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ppc.csv"
    with path.open("w") as fh:
        fh.write("pair,p_value\n")
        fh.write(f"GLOBAL,{fmt(result.global_p)}\n")
        for label, p in zip(result.pair_labels, result.pair_p):
            fh.write(f"{label},{fmt(p)}\n")
    print(f"global posterior predictive p-value: {result.global_p:.3f}")
    flagged = [(lab, p) for lab, p in zip(result.pair_labels, result.pair_p) if p < 0.01]
    for lab, p in flagged:
        print(f"  {lab}: p = {p:.4f}")
    return 0


def _summarize(args):
    chains = read_draws(args.chains_dir)
    summary = summarize(chains)
    out = Path(args.out or args.chains_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_summary(summary, out / "summary.csv")
    for row in summary.rows():
        print(f"{row['parameter']:>16}  {row['mean']:.5g} +/- {row['sd']:.3g}  "
              f"R-hat {row['rhat']:.4f}  ESS {row['ess']:.0f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="h0meta", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="sample the posterior for a dataset")
    p.add_argument("dataset")
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--out", help=f"output directory (default ${'{'}H0META_OUTPUT_DIR{'}'})")
    p.add_argument("--seed", type=int)
    p.add_argument("--error-model", choices=["student_t4", "gaussian"])
    p.add_argument("--n-chains", type=int)
    p.add_argument("--n-iterations", type=int)
    p.add_argument("--n-jobs", type=int)
    p.add_argument("--ram", action="store_true", help="repelling-attracting update for H0")
    p.add_argument("--ridge-move", choices=["auto", "true", "false"],
                   help="extra H0 move along the likelihood's flat direction (auto: with --ram)")
    p.add_argument("--conservative-se", action="store_true",
                   help="use the larger side of two-sided uncertainties")
    p.set_defaults(func=_fit)

    p = sub.add_parser("simulate", help="synthetic robustness study")
    p.add_argument("--spec", help="key=value population file")
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--levels", default="0,0.1,0.2,0.3")
    p.add_argument("--error-models", default="student_t4,gaussian")
    p.add_argument("--n-chains", type=int)
    p.add_argument("--n-iterations", type=int)
    p.add_argument("--n-jobs", type=int)
    p.add_argument("--ram", action="store_true")
    p.add_argument("--ridge-move", choices=["auto", "true", "false"])
    p.add_argument("--dataset-only", action="store_true", help="write the dataset and stop")
    p.set_defaults(func=_simulate)

    p = sub.add_parser("ppc", help="posterior predictive check from saved draws")
    p.add_argument("dataset")
    p.add_argument("chains_dir")
    p.add_argument("--error-model", choices=["student_t4", "gaussian"])
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--conservative-se", action="store_true")
    p.set_defaults(func=_ppc)

    p = sub.add_parser("summarize", help="recompute summaries from saved draws")
    p.add_argument("chains_dir")
    p.add_argument("--out")
    p.set_defaults(func=_summarize)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
    except (DatasetFormatError, ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
