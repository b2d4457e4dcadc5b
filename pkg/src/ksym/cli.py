"""Command-line pipeline: check, reduce, integrate, reconstruct, golden.

Exit codes: 0 success, 1 a verdict failed, 2 numerical failure, 3 config
error.  CSV output is deterministic: axis-major node order (t^1 fastest),
floats with 17 significant digits.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import ProblemConfig, load_config, parse_config
from .errors import ConfigError, KsymError
from .geometry import KTangentPoint, quasi_from_natural
from .golden import GOLDEN_CONFIG, closed_form_grid
from .integrability import (
    bracket_residual,
    flow_commutation_defect,
    reduced_obstruction,
    sopde_force_symmetry,
)
from .lagrange_poincare import (
    LPState,
    harmonic_reduced_field,
    lp_residual,
    reduced_lagrangian,
    reduced_sopde,
)
from .lagrangian import general_sopde, metric_sopde, regularity_check
from .reconstruction import (
    MechanicalKConnection,
    g_regularity_check,
    reconstruct_solution,
)
from .solver import GridSpec, grid_march
from .symmetry import invariance_check, verify_bracket_table

__all__ = ["main", "build_pipeline", "Pipeline"]


class Pipeline:
    """Everything the subcommands need, assembled once from a config."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.data = cfg.data
        self.frame = cfg.invariant_frame()
        self.L = cfg.lagrangian
        if self.L.kind == "metric":
            self.sopde = metric_sopde(self.L)
        else:
            self.sopde = general_sopde(self.L, self.frame.frame_hat())
        self.reduced_l = None
        self.reduced = None
        self.connection = None

    def reduced_field(self):
        if self.reduced is None:
            if self.L.kind == "metric" and self.data.n_fiber:
                self.reduced = harmonic_reduced_field(self.L, self.data,
                                                      self.frame)
            else:
                self.reduced = reduced_sopde(self.sopde, self.data,
                                             self.frame)
        return self.reduced

    def reduced_lagrangian(self):
        if self.reduced_l is None:
            self.reduced_l = reduced_lagrangian(self.L, self.frame,
                                                self.data)
        return self.reduced_l

    def mechanical_connection(self):
        if self.connection is None and self.data.n_fiber:
            self.connection = MechanicalKConnection(self.L, self.frame,
                                                    self.data)
        return self.connection

    def initial_lpstate(self):
        cfg = self.cfg
        return LPState(qbase=cfg.init_base, v=cfg.init_v, w=cfg.init_w)

    def initial_full_state(self):
        cfg = self.cfg
        q = np.concatenate([cfg.init_base, cfg.init_fiber])
        M = np.array([[float(x) for x in row]
                      for row in self.frame.frame_hat().matrix(list(q))])
        coeff = np.concatenate([cfg.init_v, cfg.init_w], axis=1)
        u = coeff @ M
        return q, u

    def sample_states(self, count, rng):
        n, k = self.cfg.n, self.cfg.k
        return [KTangentPoint(rng.uniform(-1.0, 1.0, n),
                              rng.uniform(-1.0, 1.0, (k, n)))
                for _ in range(count)]

    def sample_lpstates(self, count, rng):
        nb, nf, k = self.data.n_base, self.data.n_fiber, self.cfg.k
        return [LPState(qbase=rng.uniform(-1.0, 1.0, max(nb, 1))[:nb],
                        v=rng.uniform(-1.0, 1.0, (k, nb)),
                        w=rng.uniform(-1.0, 1.0, (k, nf)))
                for _ in range(count)]


def build_pipeline(cfg):
    return Pipeline(cfg)


def _fmt(x):
    return f"{x:.17g}"


def write_csv(grid, path):
    k = grid.k
    header = [f"t{a + 1}" for a in range(k)] + list(grid.layout)
    lines = [",".join(header)]
    for _, t, state in grid.nodes():
        lines.append(",".join(_fmt(x) for x in list(t) + list(state)))
    text = "\n".join(lines) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


class Report:
    def __init__(self):
        self.rows = []

    def add(self, name, value, tol, ok=None):
        if ok is None:
            ok = value < tol
        self.rows.append((name, value, tol, bool(ok)))
        return ok

    @property
    def all_ok(self):
        return all(r[3] for r in self.rows)

    def print(self, out=sys.stdout):
        width = max((len(r[0]) for r in self.rows), default=10)
        for name, value, tol, ok in self.rows:
            status = "pass" if ok else "FAIL"
            out.write(f"{name:<{width}}  {value:.3e}  (tol {tol:.1e})  "
                      f"{status}\n")

    def write_csv(self, path):
        lines = ["check,value,tolerance,verdict"]
        for name, value, tol, ok in self.rows:
            lines.append(f"{name},{_fmt(value)},{_fmt(tol)},"
                         f"{'pass' if ok else 'fail'}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def run_check(pipe, args):
    cfg = pipe.cfg
    tol = args.tol if args.tol is not None else cfg.pass_tol
    seed_env = os.environ.get("KSYM_SEED")
    rng = np.random.default_rng(int(seed_env) if seed_env else 0)
    rep = Report()
    # structure constants were verified exactly at load time
    rep.add("algebra_antisymmetry_jacobi", 0.0, tol, ok=True)
    if cfg.data.n_fiber:
        pts = [rng.uniform(-1.0, 1.0, cfg.n) for _ in range(cfg.samples)]
        table = verify_bracket_table(pipe.frame, cfg.data, pts)
        for key, val in table.items():
            rep.add(f"bracket_{key}", val, tol)
        states = pipe.sample_states(cfg.samples, rng)
        rep.add("lagrangian_invariance",
                invariance_check(pipe.L, pipe.frame.Etilde, states), tol)
    states = pipe.sample_states(cfg.samples, rng)
    worst_reg = 0.0
    regular = True
    for st in states:
        verdict = regularity_check(pipe.L, st)
        regular &= verdict.regular
        worst_reg = max(worst_reg, 0.0 if verdict.regular else 1.0)
    rep.add("regularity", worst_reg, 0.5, ok=regular)
    if cfg.data.n_fiber:
        conn = pipe.mechanical_connection()
        gregular = True
        for st in states[:20]:
            gregular &= bool(g_regularity_check(conn.blocks(st)))
        rep.add("g_regularity", 0.0 if gregular else 1.0, 0.5, ok=gregular)
    rep.add("force_symmetry",
            sopde_force_symmetry(pipe.sopde, states[:20]), tol)
    # integrability at the configured initial data
    red = pipe.reduced_field()
    st = pipe.initial_lpstate()
    obstruction = reduced_obstruction(red, cfg.data, [st])
    rep.add("reduced_obstruction", float(np.max(np.abs(obstruction))), tol)
    comps = [red.flat_component(a) for a in range(cfg.k)]
    br, _ = bracket_residual(comps, [st.flat()])
    rep.add("reduced_bracket", br, tol)
    if cfg.k >= 2:
        target = [gs.hi - gs.lo for gs in cfg.grid]
        defect = flow_commutation_defect(red.rhs_list(), st.flat(),
                                         target, steps=16)
        rep.add("flow_commutation_defect", defect, max(tol, 1e-7))
    rep.print()
    if args.output:
        rep.write_csv(args.output)
    return 0 if rep.all_ok else 1


def run_reduce(pipe, args):
    cfg = pipe.cfg
    red = pipe.reduced_field()
    l = pipe.reduced_lagrangian()
    sys.stdout.write(
        f"reduced field: k={cfg.k} base={cfg.data.n_base} "
        f"fiber={cfg.data.n_fiber}\n")
    sys.stdout.write("state layout: " + ",".join(red.layout) + "\n")
    grid = grid_march(red.rhs_list(), pipe.initial_lpstate().flat(),
                      cfg.grid, red.layout, substeps=args.march_substeps,
                      sweep_order=args.order)
    res = lp_residual(l, grid, cfg.data)
    sys.stdout.write(f"reduced-equation residual on the marched solution: "
                     f"{res.max_abs:.3e}\n")
    tol = args.tol if args.tol is not None else 1e-6
    ok = res.max_abs < tol
    sys.stdout.write("self-test: " + ("pass" if ok else "FAIL") + "\n")
    if args.output:
        write_csv(grid, args.output)
    return 0 if ok else 1


def run_integrate(pipe, args):
    cfg = pipe.cfg
    red = pipe.reduced_field()
    grid = grid_march(red.rhs_list(), pipe.initial_lpstate().flat(),
                      cfg.grid, red.layout, substeps=args.march_substeps,
                      sweep_order=args.order)
    write_csv(grid, args.output)
    return 0


def run_reconstruct(pipe, args):
    cfg = pipe.cfg
    red = pipe.reduced_field()
    grid = grid_march(red.rhs_list(), pipe.initial_lpstate().flat(),
                      cfg.grid, red.layout, substeps=args.march_substeps,
                      sweep_order=args.order)
    result = reconstruct_solution(
        pipe.L, cfg.data, pipe.frame, grid,
        init_fiber=cfg.init_fiber, connection=pipe.mechanical_connection(),
        substeps=args.recon_substeps, sweep_order=args.order)
    write_csv(result.grid, args.output)
    if result.el_residual is not None:
        sys.stderr.write(
            f"field-equation residual (interior nodes): "
            f"{result.el_residual:.3e}\n")
    if result.group is not None and result.group.sweep_defect is not None:
        sys.stderr.write(
            f"group sweep defect: {result.group.sweep_defect:.3e}\n")
    return 0


def run_golden(pipe, args):
    cfg = pipe.cfg
    red = pipe.reduced_field()
    grid = grid_march(red.rhs_list(), pipe.initial_lpstate().flat(),
                      cfg.grid, red.layout, substeps=args.march_substeps,
                      sweep_order=args.order)
    result = reconstruct_solution(
        pipe.L, cfg.data, pipe.frame, grid,
        init_fiber=cfg.init_fiber, connection=pipe.mechanical_connection(),
        substeps=args.recon_substeps, sweep_order=args.order)
    exact = closed_form_grid(result.grid.axes)
    err = float(np.max(np.abs(result.grid.values - exact)))
    tol = args.tol if args.tol is not None else 1e-6
    sys.stdout.write(f"max deviation from closed form: {err:.3e} "
                     f"(tol {tol:.1e})\n")
    if result.el_residual is not None:
        sys.stdout.write(f"field-equation residual: "
                         f"{result.el_residual:.3e}\n")
    if args.output:
        write_csv(result.grid, args.output)
    return 0 if err < tol else 1


def _grid_override(cfg, specs):
    if not specs:
        return
    for text in specs:
        try:
            ax, lo, hi, count = text.split(":")
            axis = int(ax) - 1
            cfg.grid[axis] = GridSpec(float(lo), float(hi), int(count))
        except (ValueError, IndexError):
            raise ConfigError(f"bad --grid spec {text!r}; expected "
                              "AX:MIN:MAX:COUNT", "--grid") from None


def _load(args):
    if args.command == "golden" and not args.config:
        return parse_config(GOLDEN_CONFIG)
    if not args.config:
        raise ConfigError("--config is required for this subcommand", "")
    return load_config(args.config)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ksym",
        description="Field-theory pipeline: invariance checks, reduction, "
                    "integration and reconstruction.")
    parser.add_argument("command",
                        choices=["check", "reduce", "integrate",
                                 "reconstruct", "golden"])
    parser.add_argument("--config", help="problem file (JSON)")
    parser.add_argument("--grid", action="append", metavar="AX:MIN:MAX:COUNT",
                        help="override one grid axis (1-based); repeatable")
    parser.add_argument("--tol", type=float, default=None)
    parser.add_argument("--output", help="CSV output path ('-' for stdout)")
    parser.add_argument("--sweep-order", choices=["12", "21"], default="12",
                        dest="sweep_order")
    parser.add_argument("--substeps", type=int, default=None,
                    help="RK4 substeps per grid cell (march default 4, "
                         "reconstruction default 8)")
    args = parser.parse_args(argv)

    try:
        cfg = _load(args)
        args.march_substeps = args.substeps or 4
        args.recon_substeps = args.substeps or 8
        _grid_override(cfg, args.grid)
        args.order = [0, 1] if args.sweep_order == "12" else [1, 0]
        if cfg.k == 1:
            args.order = [0]
        elif cfg.k > 2:
            args.order = list(range(cfg.k))
        pipe = build_pipeline(cfg)
        runner = {
            "check": run_check,
            "reduce": run_reduce,
            "integrate": run_integrate,
            "reconstruct": run_reconstruct,
            "golden": run_golden,
        }[args.command]
        return runner(pipe, args)
    except ConfigError as err:
        sys.stderr.write(f"config error: {err}\n")
        return 3
    except KsymError as err:
        sys.stderr.write(f"numerical failure: {err}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
