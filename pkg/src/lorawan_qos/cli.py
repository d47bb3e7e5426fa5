"""Command-line entry point: ``lorawan-qos <command> --scenario FILE ...``.

Every command writes CSV files and a ``manifest.json`` into ``--out`` and
prints a readable table.  Exit status is 0 on success, 2 when ``allocate``
cannot place every mote and 1 for any other error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .allocator import CapacityTable, Criterion, allocate, capacity_table, verify_allocation
from .model import LoadVector, PlrProfile, plr_at, plr_profile
from .scenario_io import (
    Experiment,
    RunManifest,
    ScenarioError,
    format_table,
    load_experiment,
    timestamp,
    write_binned_csv,
    write_cdf_csv,
    write_curve_csv,
    write_motes_csv,
)
from .sim import SimConfig, replicate, replication_seeds, run

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ALLOCATION_FAILURE = 2
NEAR_MAX_REL = 0.05


class _Context:
    def __init__(self, args: argparse.Namespace, argv: Sequence[str]) -> None:
        self.args = args
        self.argv = list(argv)
        self.exp: Experiment = load_experiment(args.scenario)
        if getattr(args, "grid", None) is not None:
            if args.grid < 64:
                raise ScenarioError("--grid: must be >= 64")
            self.grid = args.grid
        else:
            self.grid = self.exp.grid_points
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[Path] = []
        self.seeds: list[int] = []
        self.t0 = time.perf_counter()
        self.started = timestamp()

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def finish(self) -> None:
        manifest = RunManifest(
            config_digest=self.exp.digest,
            tool_version=__version__,
            command=self.args.command,
            argv=self.argv,
            seeds=self.seeds,
            outputs=[p.name for p in self.outputs],
            wall_clock_s=round(time.perf_counter() - self.t0, 6),
            started_at=self.started,
        )
        manifest.write(self.out / "manifest.json")


def _present_pairs(exp: Experiment) -> list[tuple[int, int]]:
    counts = exp.counts
    return [(i, g) for i in range(counts.shape[0]) for g in range(counts.shape[1]) if counts[i, g] > 0]


def _profiles(ctx: _Context) -> list[tuple[int, int, PlrProfile]]:
    sc = ctx.exp.scenario
    loads = LoadVector.from_counts(ctx.exp.counts, sc)
    pairs = _present_pairs(ctx.exp)
    if not pairs:
        raise ScenarioError("assignment: no motes are assigned to any MCS")
    return [(i, g, plr_profile(i, sc.groups[g], loads, sc, ctx.grid)) for i, g in pairs]


def cmd_plr_curve(ctx: _Context) -> int:
    rows = []
    for i, g, prof in _profiles(ctx):
        write_curve_csv(ctx.path(f"plr_curve_mcs{i}_group{g}.csv"), prof)
        rows.append(
            (i, ctx.exp.scenario.groups[g].name, f"{prof.max_plr:.4e}", f"{prof.average_plr:.4e}",
             f"{prof.max_plr / prof.average_plr:.3f}" if prof.average_plr > 0 else "-", f"{prof.argmax:.2f}")
        )
    print(format_table(("mcs", "group", "max_plr", "average_plr", "max/avg", "argmax_m"), rows))
    return EXIT_OK


def cmd_plr_cdf(ctx: _Context) -> int:
    rows = []
    for i, g, prof in _profiles(ctx):
        write_cdf_csv(ctx.path(f"plr_cdf_mcs{i}_group{g}.csv"), prof)
        rows.append(
            (i, ctx.exp.scenario.groups[g].name, f"{prof.percentile(0.5):.4e}", f"{prof.percentile(0.9):.4e}",
             f"{prof.max_plr:.4e}", f"{prof.fraction_near_max(NEAR_MAX_REL):.3f}")
        )
    print(format_table(("mcs", "group", "median", "p90", "max_plr", "share_within_5pct_of_max"), rows))
    return EXIT_OK


def _criterion(ctx: _Context) -> Criterion:
    try:
        return Criterion.parse(ctx.args.criterion)
    except ValueError as exc:
        raise ScenarioError(f"--criterion: {exc}") from None


def _print_capacities(table: CapacityTable) -> None:
    rows = [(i, *(f"{v:.6g}" for v in row)) for i, row in enumerate(table.nu)]
    print(f"capacity (frames/s), criterion {table.criterion}")
    print(format_table(("mcs", *table.group_names), rows))


def cmd_capacity(ctx: _Context) -> int:
    table = capacity_table(ctx.exp.scenario, _criterion(ctx), grid_points=ctx.grid)
    table.write_csv(ctx.path("capacities.csv"))
    _print_capacities(table)
    return EXIT_OK


def cmd_allocate(ctx: _Context) -> int:
    sc = ctx.exp.scenario
    if ctx.args.capacities:
        src = Path(ctx.args.capacities)
        if not src.is_file():
            raise ScenarioError(f"--capacities: file {src} not found")
        table = CapacityTable.read_csv(src, _criterion(ctx))
        if table.shape != (sc.m_count, len(sc.groups)):
            raise ScenarioError(
                f"--capacities: table is {table.shape[0]} x {table.shape[1]}, scenario needs {sc.m_count} x {len(sc.groups)}"
            )
    else:
        table = capacity_table(sc, _criterion(ctx), grid_points=ctx.grid)
        table.write_csv(ctx.path("capacities.csv"))
    _print_capacities(table)
    alloc = allocate(sc.groups, table)
    names = [g.name for g in sc.groups]
    ctx.path("allocation.csv").write_text(alloc.to_csv(names))
    print()
    print(format_table(("mcs", *names, "load"), [(i, *row, f"{float(alloc.loads[i]):.6g}") for i, row in enumerate(alloc.counts)]))
    if not alloc.success:
        print(f"\nallocation failure: {alloc.failure.describe()}")
        return EXIT_ALLOCATION_FAILURE
    if ctx.args.verify:
        rep = verify_allocation(alloc, sc, ctx.grid)
        rows = [(names[g], f"{rep.group_worst[g]:.3e}", f"{rep.targets[g]:.1e}", "yes" if rep.compliant[g] else "NO")
                for g in range(len(names))]
        print()
        print(format_table(("group", "worst_plr", "target", "compliant"), rows))
    print("\nallocation: success")
    return EXIT_OK


def _sim_config(ctx: _Context) -> SimConfig:
    exp = ctx.exp
    return SimConfig(exp.scenario, exp.sim.duration, seed=exp.sim.seed, counts=exp.counts)


def _simulate(ctx: _Context):
    cfg = _sim_config(ctx)
    n = ctx.args.seeds
    if n < 1:
        raise ScenarioError("--seeds: must be >= 1")
    bins = ctx.exp.sim.bins
    if n == 1:
        ctx.seeds = [cfg.seed]
        stats = run(cfg)
        return [stats], stats.binned(bins)
    ctx.seeds = replication_seeds(cfg.seed, n)
    rep = replicate(cfg, n, seeds=ctx.seeds, bins=bins, workers=ctx.args.workers)
    return rep.runs, rep.curve


def cmd_simulate(ctx: _Context) -> int:
    runs, curve = _simulate(ctx)
    for k, stats in enumerate(runs):
        write_motes_csv(ctx.path(f"motes_rep{k}.csv"), stats)
    write_binned_csv(ctx.path("binned.csv"), curve)
    gen = sum(int(r.generated.sum()) for r in runs)
    lost = sum(int(r.lost.sum()) for r in runs)
    rows = [(f"{c:.1f}", int(n), f"{m:.4e}", f"{lo:.4e}", f"{hi:.4e}")
            for c, n, m, lo, hi in zip(curve.centers, curve.generated, curve.plr_mean, curve.ci_low, curve.ci_high)]
    print(format_table(("x_bin_center", "generated", "plr_mean", "ci_low", "ci_high"), rows))
    print(f"\nframes generated {gen}, lost {lost}, overall PLR {lost / gen if gen else float('nan'):.4e}")
    return EXIT_OK


def cmd_validate(ctx: _Context) -> int:
    exp = ctx.exp
    pairs = _present_pairs(exp)
    if len(pairs) != 1:
        raise ScenarioError("validate needs every mote on a single MCS and in a single group")
    mcs, g = pairs[0]
    runs, curve = _simulate(ctx)
    loads = LoadVector.from_counts(exp.counts, exp.scenario)
    centers = curve.centers
    model = np.asarray(plr_at(centers, mcs, exp.scenario.groups[g], loads, exp.scenario))
    ok_bins = ~np.isnan(curve.plr_mean)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(model > 0, np.abs(curve.plr_mean - model) / model, np.nan)
    inside = (model >= curve.ci_low) & (model <= curve.ci_high)
    agree = inside | (rel <= ctx.args.rel_tol)
    rows = []
    lines = []
    for b in range(len(centers)):
        rows.append((f"{centers[b]:.1f}", f"{curve.plr_mean[b]:.4e}", f"{curve.ci_low[b]:.4e}", f"{curve.ci_high[b]:.4e}",
                     f"{model[b]:.4e}", f"{rel[b]:.3f}", "yes" if agree[b] else "no"))
        lines.append(",".join(repr(float(v)) for v in (centers[b], curve.plr_mean[b], curve.ci_low[b], curve.ci_high[b], model[b], rel[b])) + f",{int(agree[b])}")
    path = ctx.path("validation.csv")
    path.write_text("x_bin_center,plr_mean,ci_low,ci_high,model_plr,rel_dev,agree\n" + "\n".join(lines) + "\n")
    write_binned_csv(ctx.path("binned.csv"), curve)
    print(format_table(("x_bin_center", "sim_plr", "ci_low", "ci_high", "model_plr", "rel_dev", "agree"), rows))
    share = float(agree[ok_bins].mean()) if ok_bins.any() else float("nan")
    print(f"\nbins agreeing (inside CI or within {ctx.args.rel_tol:.0%}): {share:.3f}")
    return EXIT_OK


COMMANDS = {
    "plr-curve": (cmd_plr_curve, "PLR against distance for every assigned (MCS, group)"),
    "plr-cdf": (cmd_plr_cdf, "distribution of PLR over the motes"),
    "capacity": (cmd_capacity, "capacity table under the chosen criterion"),
    "allocate": (cmd_allocate, "greedy MCS allocation"),
    "simulate": (cmd_simulate, "event-driven simulation with binned PLR"),
    "validate": (cmd_validate, "simulation against the analytic curve, bin by bin"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lorawan-qos", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--grid", type=int, default=None, help="grid points for PLR profiles (default from scenario)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("capacity", "allocate"):
            p.add_argument("--criterion", default="max", help="max, average or percentile=<p> (default: max)")
        if name == "allocate":
            p.add_argument("--capacities", help="capacity CSV to use instead of computing one")
            p.add_argument("--verify", action="store_true", help="report worst PLR per group under the allocation")
        if name in ("simulate", "validate"):
            p.add_argument("--seeds", type=int, default=1 if name == "simulate" else 10, help="number of replications")
            p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
        if name == "validate":
            p.add_argument("--rel-tol", type=float, default=0.15, help="relative agreement tolerance (default 0.15)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for allocation failure
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        ctx = _Context(args, argv)
        status = handler(ctx)
        ctx.finish()
        return status
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
