"""Command line interface: ``fracpm run | validate | frac-test | decay-fit``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import parse_config
from .errors import ConfigError, FracPMError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
SNAP_TOL = 1e-9


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fracpm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a configured simulation")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--nx", type=int)
    r.add_argument("--ny", type=int)
    r.add_argument("--dt", type=float)
    r.add_argument("--t-final", type=float)
    r.add_argument("--format", choices=("csv", "vtk", "both"), default="csv",
                   help="snapshot format")
    r.add_argument("--slice", action="append", default=[], metavar="AXIS=VALUE",
                   help="also write cross-sections such as y=0 at snapshot times")

    v = sub.add_parser("validate", help="run the invariant suites")
    v.add_argument("--level", choices=("fast", "full"), default="fast")

    f = sub.add_parser("frac-test", help="rational apply vs dense eigen oracle")
    f.add_argument("--config", required=True)
    f.add_argument("--nx", type=int, default=None, help="mesh cells (default min(nx, 32))")
    f.add_argument("--samples", type=int, default=5)
    f.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("decay-fit", help="fit the late-time slope of log(l1_dist)")
    d.add_argument("--csv", required=True)
    d.add_argument("--t0", type=float, required=True)
    d.add_argument("--t1", type=float, required=True)
    d.add_argument("--column", default="l1_dist")
    d.add_argument("--domain", type=float, nargs=4, default=(-2.0, 2.0, -2.0, 2.0),
                   metavar=("X0", "X1", "Y0", "Y1"))
    return ap


def _cmd_run(args) -> int:
    from .io import DiagnosticsWriter, extract_slice, parse_slice, write_slice, write_snapshot
    from .stepper import run, setup

    cfg = parse_config(args.config)
    over = {k: getattr(args, a) for k, a in
            (("nx", "nx"), ("ny", "ny"), ("dt", "dt"), ("t_final", "t_final"))
            if getattr(args, a) is not None}
    if over:
        cfg = cfg.override(**over)
    slices = [parse_slice(s) for s in args.slice]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fmts = ("csv", "vtk") if args.format == "both" else (args.format,)

    sim = setup(cfg)
    mesh = sim.mesh
    pending = sorted(cfg.snapshot_times)

    def snapshot(state):
        tag = f"t{state.t:.4f}"
        for fmt in fmts:
            write_snapshot(state.rho, mesh, out / f"rho_{tag}.{fmt}", fmt, "rho")
            write_snapshot(state.c, mesh, out / f"c_{tag}.{fmt}", fmt, "c")
        for axis, val in slices:
            coords, vals = extract_slice(state.rho, mesh, axis, val)
            write_slice(coords, vals, out / f"slice_{axis}{val:g}_{tag}.csv",
                        "x" if axis == "y" else "y")

    def due(t):
        hit = False
        while pending and pending[0] <= t + SNAP_TOL:
            pending.pop(0)
            hit = True
        return hit

    if due(0.0):
        snapshot(sim.initial)
    logging.getLogger(__name__).info("%s: %d steps on %d vertices, rational degree %d",
                                     cfg.name, cfg.n_steps, mesh.n_vertices,
                                     sim.scheme.fracop.rational.degree)
    with DiagnosticsWriter(out / "diagnostics.csv") as w:
        for state, diag in run(sim):
            w.write(diag)
            if due(state.t):
                snapshot(state)
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .validation import run_checks
    return EXIT_OK if run_checks(args.level) else EXIT_NUMERIC


def _cmd_frac_test(args) -> int:
    from .fracop import (build_frac_operator, dense_eigenpairs, frac_inverse_apply,
                         frac_inverse_dense_oracle)
    from .mesh import build_rect_mesh

    cfg = parse_config(args.config)
    nx = args.nx or min(cfg.nx, 32)
    ny = max(1, round(nx * cfg.ny / cfg.nx))
    mesh = build_rect_mesh(*cfg.domain, nx, ny)
    op = build_frac_operator(mesh, cfg.coefficients(), cfg.s, mass=cfg.solver.mass,
                             tol=cfg.solver.rational_tol, max_degree=cfg.solver.max_degree,
                             force=cfg.force)
    eig = dense_eigenpairs(op)
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.samples):
        f = rng.standard_normal(mesh.n_vertices)
        a, b = frac_inverse_apply(op, f), frac_inverse_dense_oracle(op, f, eig)
        d = a - b
        worst = max(worst, float(np.sqrt(d @ (op.M @ d) / (b @ (op.M @ b)))))
    print(f"mesh {nx}x{ny}, kernel {op.kernel_mode}, interval [{op.lam_lo:.6g}, {op.lam_hi:.6g}], "
          f"degree {op.rational.degree}, rational error {op.rational.error:.3e}")
    print(f"max relative M-norm discrepancy: {worst:.3e}")
    return EXIT_OK


def _cmd_decay_fit(args) -> int:
    from .io import read_diagnostics_csv
    from .stepper import fit_decay_rate

    cols = read_diagnostics_csv(args.csv)
    if args.column not in cols or "t" not in cols:
        raise ConfigError(f"{args.csv} has no column {args.column!r}")
    slope = fit_decay_rate(cols["t"], cols[args.column], args.t0, args.t1)
    x0, x1, y0, y1 = args.domain
    lam1 = np.pi ** 2 / max(x1 - x0, y1 - y0) ** 2
    print(f"slope: {slope:.10g}")
    print(f"reference -2*lambda_1: {-2 * lam1:.10g}")
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "validate": _cmd_validate, "frac-test": _cmd_frac_test,
             "decay-fit": _cmd_decay_fit}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.cmd](args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"fracpm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FracPMError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"fracpm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
