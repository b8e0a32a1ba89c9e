"""Command-line interface.

    spar config init [--output-dir DIR]
    spar fit        --config CFG [--input CSV]
    spar bandwidth  --config CFG [--input CSV]
    spar stability  --config CFG [--input CSV]
    spar simulate   --model FILE [-n N]
    spar contour    --model FILE --beta B [--grid-m M]
    spar diagnose   --model FILE --config CFG [--input CSV]

Every command accepts ``--seed``, ``--config`` and ``--output-dir``. Log
verbosity comes from the ``SPAR_LOG_LEVEL`` environment variable. Failures
print one ``spar: error: <Type>: <message>`` line to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .angular import optimize_bandwidth
from .config import RunConfig
from .diagnostics import (
    bootstrap_curves,
    cell_counts,
    downsample,
    exceedance_on_grid,
    marginal_tail_curves,
    observed_vs_expected,
    qq_bins,
    threshold_stability,
)
from .geometry import sphere_grid, to_polar
from .model import contour_cloud, fit_spar, load, save, simulate
from .nnet import TrainConfig
from .preprocess import PreprocessSpec, apply_spec, filter_steepness, ingest, prepare, steepness, to_physical
from .tables import atomic_write_text, provenance_lines, write_table

log = logging.getLogger("spar")

MODEL_NAME = "model.spar"


class Context:
    def __init__(self, args):
        self.args = args
        self.config = RunConfig.load(args.config) if args.config else RunConfig()
        self.seed = args.seed if args.seed is not None else self.config.seed
        self.out = Path(args.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)

    def header(self, command, **params):
        digest = self.config.digest() if self.args.config else None
        return provenance_lines(command, self.seed, digest, params)

    def train_config(self) -> TrainConfig:
        return self.config.train.build(self.seed)

    def input_path(self):
        path = getattr(self.args, "input", None) or self.config.data.input
        if not path:
            raise ValueError("no input data: pass --input or set data.input in the config")
        return path

    def load_data(self):
        raw, report = ingest(self.input_path(), self.config.data.columns or None)
        log.info("read %d rows", report.n_rows)
        return raw

    def prepared(self):
        X, spec = prepare(self.load_data(), self.config.data.origin)
        return X, spec


def cmd_config(ctx: Context) -> None:
    text = RunConfig().dump() if ctx.args.action == "init" else ctx.config.dump()
    path = ctx.out / "config.yaml"
    atomic_write_text(path, text)
    print(path)


def cmd_fit(ctx: Context) -> None:
    X, spec = ctx.prepared()
    m = ctx.config.model
    model = fit_spar(
        X,
        zeta=m.zeta,
        kappa=m.kappa,
        kappa_grid=m.kappa_grid(),
        m_pred=min(m.m_pred, len(X)),
        k_exclude=m.k_exclude,
        hidden=tuple(m.hidden),
        threshold_config=ctx.train_config(),
        seed=ctx.seed,
        preprocess=spec.to_dict(),
    )
    save(model, ctx.out / MODEL_NAME)
    if "kappa_nll" in model.info:
        table = pd.DataFrame({"kappa": model.info["kappa_grid"], "nll": model.info["kappa_nll"]})
        write_table(table, ctx.out / "bandwidth.csv", ctx.header("fit", kappa_star=model.kde.kappa))
    if model.info.get("threshold_degraded") or model.info.get("gp_degraded"):
        log.warning("fit finished with a degraded-fit flag; see the model header")
    print(ctx.out / MODEL_NAME)


def cmd_bandwidth(ctx: Context) -> None:
    X, _ = ctx.prepared()
    m = ctx.config.model
    grid = m.kappa_grid()
    kappa, nll = optimize_bandwidth(to_polar(X).angles, grid, min(m.m_pred, len(X)), m.k_exclude, ctx.seed)
    table = pd.DataFrame({"kappa": grid, "nll": nll, "selected": grid == kappa})
    path = write_table(table, ctx.out / "bandwidth.csv", ctx.header("bandwidth", kappa_star=kappa))
    print(path)


def cmd_stability(ctx: Context) -> None:
    X, _ = ctx.prepared()
    dg = ctx.config.diagnostics
    table = threshold_stability(X, dg.zeta_grid(), tuple(ctx.config.model.hidden), ctx.train_config(), dg.q_level)
    path = write_table(table, ctx.out / "stability.csv", ctx.header("stability", q_level=dg.q_level))
    print(path)


def _spec(model) -> PreprocessSpec | None:
    return PreprocessSpec.from_dict(model.preprocess) if model.preprocess else None


def cmd_simulate(ctx: Context) -> None:
    model = load(ctx.args.model)
    n = ctx.args.n or ctx.config.diagnostics.sim_factor * int(model.info.get("n", len(model.body_pool)))
    Y = simulate(model, n, ctx.seed)
    spec = _spec(model)
    params = {"model": Path(ctx.args.model).name, "n": n}
    if spec is None:
        table = pd.DataFrame(Y, columns=[f"x{i}" for i in range(model.d)])
    else:
        table = to_physical(Y, spec)
        if spec.kind == "metocean":
            table, removed = filter_steepness(table, ctx.config.steepness_cap)
            params.update(steepness_cap=ctx.config.steepness_cap, removed_fraction=removed)
    path = write_table(table, ctx.out / "simulated.csv", ctx.header("simulate", **params))
    print(path)


def cmd_contour(ctx: Context) -> None:
    model = load(ctx.args.model)
    m = ctx.args.grid_m or ctx.config.diagnostics.grid_m
    cloud = contour_cloud(model, sphere_grid(model.d, m), ctx.args.beta)
    spec = _spec(model)
    cols = list(spec.columns) if spec else [f"x{i}" for i in range(model.d)]
    table = pd.DataFrame(cloud[:, :-1], columns=cols)
    table["angular_density"] = cloud[:, -1]
    path = write_table(table, ctx.out / "contour.csv", ctx.header("contour", beta=ctx.args.beta, grid_m=m))
    print(path)


def _marginals(X, spec) -> pd.DataFrame:
    if spec is None:
        return pd.DataFrame(X, columns=[f"x{i}" for i in range(X.shape[1])])
    phys = to_physical(X, spec)
    if spec.kind == "metocean":
        phys["steepness"] = steepness(phys["hs"], phys["tm"])
        return phys[["hs", "tm", "u10", "steepness", "ux", "uy", "hx", "hy"]]
    return phys


def cmd_diagnose(ctx: Context) -> None:
    model = load(ctx.args.model)
    dg = ctx.config.diagnostics
    spec = _spec(model)
    raw = ctx.load_data()
    X = apply_spec(raw, spec) if spec else raw.dropna().to_numpy(dtype=float)
    n_sim = dg.sim_factor * len(X)
    Y = simulate(model, n_sim, ctx.seed)
    po, ps = to_polar(X), to_polar(Y)
    grid = sphere_grid(model.d, dg.grid_m)
    theta = np.radians(dg.theta_max_deg)
    hdr = dict(n_obs=len(X), n_sim=n_sim, grid_m=dg.grid_m)
    written = []

    counts = pd.DataFrame({"cell": np.arange(len(grid.directions))})
    counts["observed"] = cell_counts(po.angles, grid, theta)
    counts["simulated"] = cell_counts(ps.angles, grid, theta)
    written.append(write_table(counts, ctx.out / "cell_counts.csv", ctx.header("diagnose", theta_max_deg=dg.theta_max_deg, **hdr)))

    sub = downsample(len(X), dg.stride)
    cells = observed_vs_expected(po.angles[sub], ps.angles, grid, dg.ci_level).to_frame()
    written.append(write_table(cells, ctx.out / "voronoi.csv", ctx.header("diagnose", stride=dg.stride, level=dg.ci_level, **hdr)))

    points, agg = qq_bins(po, ps, grid, theta, dg.min_count, model.zeta)
    qh = ctx.header("diagnose", min_count=dg.min_count, theta_max_deg=dg.theta_max_deg, zeta=model.zeta, **hdr)
    written.append(write_table(points, ctx.out / "qq_bins.csv", qh))
    written.append(write_table(agg, ctx.out / "qq_aggregate.csv", qh))

    mo, ms = _marginals(X, spec), _marginals(Y, spec)
    curves = marginal_tail_curves(mo.to_numpy(), ms.to_numpy(), mo.columns)
    written.append(write_table(curves, ctx.out / "marginal_curves.csv", ctx.header("diagnose", **hdr)))

    # block-bootstrap envelope of the observed exceedance curves
    grids = {}
    for name in mo.columns:
        sel = curves[(curves.variable == name) & (curves["sample"] == "observed") & (curves.kind == "exceedance")]
        grids[name] = sel["x"].to_numpy()
    obs_vals = mo.to_numpy()

    def stat(rows):
        return np.concatenate([exceedance_on_grid(rows[:, i], grids[c]) for i, c in enumerate(mo.columns)])

    block = min(dg.block_len, len(X))
    lo, hi, _ = bootstrap_curves(obs_vals, stat, block, dg.n_boot, dg.ci_level, ctx.seed)
    env = pd.DataFrame(
        {
            "variable": np.concatenate([[c] * len(grids[c]) for c in mo.columns]),
            "x": np.concatenate([grids[c] for c in mo.columns]),
            "lower": lo,
            "upper": hi,
        }
    )
    bh = ctx.header("diagnose", n_boot=dg.n_boot, block_len=block, level=dg.ci_level, **hdr)
    written.append(write_table(env, ctx.out / "marginal_bootstrap.csv", bh))
    for p in written:
        print(p)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
    common.add_argument("--config", default=None, help="YAML run configuration")
    common.add_argument("--output-dir", default=".", help="directory for output files")

    parser = argparse.ArgumentParser(prog="spar", description="Angular-radial extreme value modelling.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", parents=[common], help="write the default or resolved configuration")
    p.add_argument("action", choices=["init", "show"])
    p.set_defaults(func=cmd_config)

    for name, func, text in (
        ("fit", cmd_fit, "fit a model to a CSV data set"),
        ("bandwidth", cmd_bandwidth, "cross-validated bandwidth curve"),
        ("stability", cmd_stability, "threshold stability sweep over zeta"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--input", help="CSV file (overrides data.input)")
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", parents=[common], help="simulate from a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("-n", type=int, default=None, help="sample size (default: sim_factor x training size)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("contour", parents=[common], help="exceedance contour on a sphere grid")
    p.add_argument("--model", required=True)
    p.add_argument("--beta", type=float, required=True, help="total exceedance probability")
    p.add_argument("--grid-m", type=int, default=None)
    p.set_defaults(func=cmd_contour)

    p = sub.add_parser("diagnose", parents=[common], help="diagnostic tables for a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", help="CSV file (overrides data.input)")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("SPAR_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.func(Context(args))
    except Exception as exc:
        msg = " ".join(str(exc).split())
        print(f"spar: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
