"""Command-line interface: ``mppsynth {fit,synthesize,evaluate,simulate,inspect-state}``.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ConfigError, RunConfig
from .data import DataError, Schema, load_dataset, save_dataset
from .evaluation import RiskThresholds, default_h_grid, evaluate
from .mcmc import NumericalError
from .pipeline import FitError, ModelState, fit_model, synthesize_from_state
from .simulate import GeneratorSpec, SimulationSpecError, simulate, write_truth
from .state import StateFormatError
from .synthesis import CandidatePool, SynthesisError, write_replicates

log = logging.getLogger("mppsynth")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for flag, key in (("seed", "seed"), ("workers", "workers"), ("pool", "pool"), ("L", "L")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    eps_s, eps_a = getattr(args, "eps_s", None), getattr(args, "eps_a", None)
    if eps_s is not None or eps_a is not None:
        overrides["thresholds"] = RiskThresholds(
            cfg.thresholds.eps_s if eps_s is None else eps_s,
            cfg.thresholds.eps_a if eps_a is None else eps_a,
        )
    if not overrides:
        return cfg
    d = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    d.update(overrides)
    try:
        return RunConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _output(cfg: RunConfig, explicit, key: str, default: str) -> Path:
    if explicit:
        return Path(explicit)
    return cfg.resolve(cfg.outputs.get(key, default))


def cmd_fit(args) -> int:
    cfg = _config(args)
    data_path = Path(args.data) if args.data else (cfg.resolve(cfg.data_path) if cfg.data_path else None)
    if data_path is None:
        raise ConfigError("no dataset given (use --data or data.path in the config)")
    ds = load_dataset(data_path, cfg.schema)
    log.info("loaded %s from %s", ds, data_path)
    state = fit_model(ds, cfg)
    out = _output(cfg, args.out, "state", "model.state")
    out.parent.mkdir(parents=True, exist_ok=True)
    state.save(out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    cfg = _config(args)
    state = ModelState.load(args.state)
    L = args.L if args.L is not None else cfg.L
    pool = CandidatePool.parse(cfg.pool, rng=np.random.SeedSequence(cfg.seed).spawn(2)[1],
                               transform=state.transform, schema=state.schema)
    plan, reps = synthesize_from_state(state, L, pool, cfg.seed, workers=cfg.workers,
                                       min_pool=cfg.min_pool)
    outdir = _output(cfg, args.out, "replicates", "synthetic")
    manifest = write_replicates(reps, outdir, plan, state.schema)
    print(f"wrote {len(reps)} replicate(s) and {manifest}")
    return EXIT_OK


def _load_replicates(directory: Path, schema: Schema, bounds) -> list:
    manifest = directory / "manifest.json"
    if manifest.exists():
        files = [directory / r["file"] for r in json.loads(manifest.read_text())["replicates"]]
    else:
        files = sorted(directory.glob("replicate_*.csv"))
    return [load_dataset(f, schema, bounds=bounds) for f in files]


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    schema = cfg.schema
    if args.state:
        state = ModelState.load(args.state)
        schema = state.schema
    conf_path = Path(args.confidential) if args.confidential else (
        cfg.resolve(cfg.data_path) if cfg.data_path else None)
    if conf_path is None:
        raise ConfigError("no confidential dataset given (use --confidential or data.path)")
    conf = load_dataset(conf_path, schema)
    bounds = None if conf.transform.is_identity else conf.transform.source_bounds
    syn_dir = Path(args.synthetic) if args.synthetic else _output(cfg, None, "replicates", "synthetic")
    reps = _load_replicates(syn_dir, Schema(**{**schema.__dict__, "K": conf.K}), bounds)
    if not reps:
        raise DataError(f"no replicate files found in {syn_dir}")
    report = evaluate(reps, conf, cfg.thresholds, cfg.analyses,
                      h_grid=default_h_grid(cfg.h_max, cfg.h_step), quantiles=cfg.quantiles,
                      risk=not args.no_risk)
    outdir = _output(cfg, args.out, "reports", "reports")
    path = report.write(outdir, plot_data=args.plot_data)
    print(json.dumps(report.summary(), indent=1))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    path = Path(args.spec)
    if not path.exists():
        raise SimulationSpecError(f"no such generator spec: {path}")
    raw = yaml.safe_load(path.read_text())
    if not isinstance(raw, dict):
        raise SimulationSpecError(f"{path}: spec must be a mapping")
    spec = GeneratorSpec.from_dict(raw)
    ds = simulate(spec, np.random.default_rng(args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    truth = Path(args.truth) if args.truth else out.with_suffix(".truth.json")
    write_truth(truth, spec, ds, args.seed)
    print(f"simulated N={ds.N} (counts {ds.counts.tolist()}); wrote {out} and {truth}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    state = ModelState.load(args.state)
    ic, mc = state.intensity, state.marks
    info = {
        "K": state.K, "N": state.N, "counts": state.counts.tolist(),
        "knots": {"grid": len(state.knots.grid_knots), "intensity": len(state.knots.pp_knots)},
        "kernel": {"family": ic.kernel.family, "decay": ic.kernel.decay},
        "retained_draws": {"intensity": ic.n_draws, "marks": mc.n_draws},
        "mark_family": mc.family,
        "acceptance": {"intensity": ic.acceptance.tolist(), "marks": mc.acceptance.tolist()},
        "posterior_mean_integrated_intensity": ic.integrated_intensity().mean(axis=0).tolist(),
        "seed": state.seed,
    }
    print(json.dumps(info, indent=1, allow_nan=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mppsynth", description="Fully synthetic marked point-pattern data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)

    f = sub.add_parser("fit", help="fit categorical, intensity and mark models")
    common(f)
    f.add_argument("--data", help="confidential CSV (overrides data.path)")
    f.add_argument("--out", help="model-state file to write")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("synthesize", help="generate synthetic replicates from a fitted state")
    common(s)
    s.add_argument("--state", required=True)
    s.add_argument("--replicates", dest="L", type=int, help="number of replicates L")
    s.add_argument("--pool", help="grid:R | uniform:N_s | file:path")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_synthesize)

    e = sub.add_parser("evaluate", help="utility and disclosure-risk reports")
    common(e)
    e.add_argument("--state", help="fitted state (supplies the schema)")
    e.add_argument("--confidential", help="confidential CSV")
    e.add_argument("--synthetic", help="directory of replicate CSVs")
    e.add_argument("--eps-s", dest="eps_s", type=float)
    e.add_argument("--eps-a", dest="eps_a", type=float)
    e.add_argument("--no-risk", action="store_true", help="skip Type S/A risk")
    e.add_argument("--plot-data", action="store_true", help="also write ready-to-plot tables")
    e.add_argument("--out", help="report directory")
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("simulate", help="simulate a ground-truth dataset")
    m.add_argument("--spec", required=True, help="YAML generator spec")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True, help="CSV to write")
    m.add_argument("--truth", help="truth JSON (default: <out>.truth.json)")
    m.set_defaults(func=cmd_simulate)

    i = sub.add_parser("inspect-state", help="summarize a model-state file")
    i.add_argument("--state", required=True)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if exc.numerical else EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DataError, SynthesisError, StateFormatError, SimulationSpecError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
