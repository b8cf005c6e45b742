"""Command line entry point.

    rtinverse forward      --config CFG [--out DIR] [--seed S]
    rtinverse reconstruct  --config CFG --data G.csv [--data2 GISO.csv] --variant V
    rtinverse gauge        --config CFG
    rtinverse convergence  --config CFG --levels K
    rtinverse selftest     [--out DIR]

Exit codes: 0 success, 2 configuration or usage error, 3 solver divergence,
4 data-consistency failure, 5 precondition failure.  The number of compute
threads is taken from ``RTINVERSE_THREADS``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .aanalytic import HAccuracyError, NearBoundaryError
from .config import Config, ConfigError, load_config, mask_array
from .elliptic import hodge_decompose, poisson_dirichlet
from .gauge import gauge_verify, make_pair
from .grid import OutOfDomainError, PolarGrid, gradient, write_field_csv
from .recon import (DataConsistencyError, add_noise, error_metrics, prepare_coeffs,
                    recover_divfree, recover_F_where_f0_zero, recover_solenoidal,
                    recover_twodata, relative_l2)
from .report import (Report, ensure_dir, fmt, manifest, plot_boundary_data, plot_convergence,
                     plot_fields, plot_vector, write_modes_csv, write_vector_csv)
from .transport import (BoundaryData, DivergenceError, PreconditionError, extract_boundary_data,
                        mass_balance, solve_forward)

log = logging.getLogger("rtinverse")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_DATA = 4
EXIT_PRECONDITION = 5

VARIANTS = ("solenoidal", "divfree", "twodata", "remark")
THREADS_ENV = "RTINVERSE_THREADS"


class UsageError(Exception):
    pass


def _set_threads():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return
    try:
        import numba
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got '{n}'") from None


class Timer:
    def __init__(self):
        self.marks = {}

    def __call__(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.marks[name] = time.perf_counter() - self.t
                log.info("%s: %.2f s", name, timer.marks[name])

        return _Ctx()

    def write(self, path, man):
        with open(path, "w") as fh:
            fh.write(f"# {man}\n# wall-clock timings (not reproducible)\n")
            for k, v in self.marks.items():
                fh.write(f"{k} = {v:.3f}\n")


def _parameters(cfg: Config, grid: PolarGrid, command: str) -> dict:
    return {
        "command": command,
        "config": os.path.basename(cfg.path),
        "Nr": grid.nr,
        "Nbeta": grid.nbeta,
        "Ntheta": cfg.ntheta,
        "N": cfg.modes,
        "h_ray": cfg.ray_step(grid),
        "M": cfg.medium(grid).M,
        "tol": cfg.tol,
        "max_iter": cfg.max_iter,
        "noise_std": cfg.noise_std,
        "seed": cfg.seed,
        "version": __version__,
    }


def _forward(cfg: Config, grid: PolarGrid, source, medium=None):
    medium = medium or cfg.medium(grid)
    dirs = cfg.directions()
    res = solve_forward(medium, source, dirs, tol=cfg.tol, max_iter=cfg.max_iter,
                        h_ray=cfg.ray_step(grid))
    return res, extract_boundary_data(res.u, dirs), medium


# ---------------------------------------------------------------------------
# commands


def cmd_forward(cfg: Config, out: str) -> int:
    if cfg.source is None:
        raise ConfigError("forward needs a [source] section")
    grid = cfg.grid()
    man = manifest(cfg.sha256, cfg.seed)
    timer = Timer()
    source = cfg.source.build(grid)
    with timer("forward solve"):
        res, data, medium = _forward(cfg, grid, source)
    mb = mass_balance(res.u, data, medium, source)
    ensure_dir(out)
    data.write_csv(os.path.join(out, "g.csv"), [man])
    u0 = res.u.mean(axis=0)
    write_field_csv(os.path.join(out, "u0.csv"), grid, u0, [man, "angular mean of the solution"])
    rep = Report("forward solve", man)
    rep.section("parameters", _parameters(cfg, grid, "forward"))
    rep.section("solver", {
        "iterations": res.iterations,
        "final_relative_update": res.converged_update,
        "subcritical_min_sigma_a": float(medium.sigma_a.min()),
    })
    rep.section("mass_balance", {
        "boundary_flux": mb["boundary_flux"],
        "volume_source": mb["volume_source"],
        "relative_error": mb["relative_error"],
        "norm": "absolute integrals over disk x circle, normalized angular measure",
    })
    rep.section("data", {
        "sup_norm": float(np.max(np.abs(data.values))),
        "rms": float(np.sqrt(np.mean(data.values**2))),
        "file": "g.csv",
    })
    if res.updates:
        rep.table("source iteration", ["iteration", "relative_update"],
                  [[i + 2, u] for i, u in enumerate(res.updates)])
    if cfg.isotropic_data:
        with timer("isotropic forward solve"):
            _, data_iso, _ = _forward(cfg, grid, cfg.source.isotropic(grid), medium)
        data_iso.write_csv(os.path.join(out, "g_iso.csv"), [man, "isotropic part of the source only"])
        rep.section("isotropic_data", {"file": "g_iso.csv",
                                       "sup_norm": float(np.max(np.abs(data_iso.values)))})
    rep.write(os.path.join(out, "forward_report.txt"))
    plot_boundary_data(os.path.join(out, "g.png"), data.values, note=man)
    plot_fields(os.path.join(out, "u0.png"), grid,
                [("f0", source.f0), ("angular mean of u", u0), ("attenuation a", medium.a)],
                note=man)
    timer.write(os.path.join(out, "timings.txt"), man)
    print(f"forward: {res.iterations} iteration(s), mass-balance relative error "
          f"{mb['relative_error']:.3e}; wrote {out}")
    return EXIT_OK


def _read_data(path: str, cfg: Config, grid: PolarGrid) -> BoundaryData:
    try:
        data = BoundaryData.read_csv(path)
    except OSError as exc:
        raise UsageError(f"cannot read data file {path}: {exc.strerror}") from None
    except (ValueError, IndexError) as exc:
        raise UsageError(f"malformed data file {path}: {exc}") from None
    if data.nbeta != grid.nbeta or data.ntheta != cfg.ntheta:
        raise PreconditionError(
            f"{path}: data grid {data.ntheta}x{data.nbeta} (Ntheta x Nbeta) does not match the "
            f"configuration {cfg.ntheta}x{grid.nbeta}")
    return data


def _reconstruct(cfg: Config, grid: PolarGrid, variant: str, data, data2=None, coeffs=None):
    medium = cfg.medium(grid)
    N = cfg.modes
    if coeffs is None:
        coeffs = prepare_coeffs(medium, cfg.directions(), N)
    if variant == "solenoidal":
        return recover_solenoidal(data, medium, N, coeffs), medium
    if variant == "divfree":
        return recover_divfree(data, medium, N, coeffs), medium
    if variant == "twodata":
        return recover_twodata(data, data2, medium, N, coeffs), medium
    return recover_F_where_f0_zero(data, medium, N, mask_array(cfg, grid), coeffs), medium


def _truth(cfg: Config, grid: PolarGrid, variant: str):
    """Ground-truth fields to compare with, when the config carries a source."""
    if cfg.source is None:
        return None, None
    src = cfg.source.build(grid)
    if variant == "solenoidal":
        return None, hodge_decompose(src.F, grid)[1]
    if variant == "remark":
        return None, src.F
    return src.f0, src.F


def cmd_reconstruct(cfg: Config, out: str, variant: str, data_path: str, data2_path: str | None) -> int:
    if variant not in VARIANTS:
        raise UsageError(f"--variant must be one of {', '.join(VARIANTS)}")
    if data_path is None:
        raise UsageError("reconstruct needs --data")
    if variant == "twodata" and data2_path is None:
        raise UsageError("variant twodata needs --data2 (data of the isotropic source alone)")
    grid = cfg.grid()
    man = manifest(cfg.sha256, cfg.seed)
    timer = Timer()
    data = _read_data(data_path, cfg, grid)
    data2 = _read_data(data2_path, cfg, grid) if data2_path else None
    noisy = cfg.noise_std > 0
    if noisy:
        data = add_noise(data, cfg.noise_std, cfg.seed)
        if data2 is not None:
            data2 = add_noise(data2, cfg.noise_std, cfg.seed + 1)
    with timer("reconstruction"):
        res, medium = _reconstruct(cfg, grid, variant, data, data2)
    ensure_dir(out)
    hdr = [man, f"variant={variant}"]
    write_vector_csv(os.path.join(out, "F.csv"), grid,
                     np.nan_to_num(res.F), hdr + ["solenoidal part" if variant == "solenoidal"
                                                  else "vector source"])
    if res.f0 is not None:
        write_field_csv(os.path.join(out, "f0.csv"), grid, res.f0, hdr)
    nkeep = min(res.modes.shape[0], medium.M + 3)
    write_modes_csv(os.path.join(out, "modes.csv"), grid, res.modes[:nkeep],
                    hdr + ["mode 0 holds u0 - phi" if variant == "solenoidal" else "mode 0 holds u0"])
    rep = Report(f"reconstruction ({variant})", man)
    params = _parameters(cfg, grid, "reconstruct")
    params.update({"variant": variant, "data": os.path.basename(data_path),
                   "data2": os.path.basename(data2_path) if data2_path else "none"})
    rep.section("parameters", params)
    diag = dict(res.diagnostics)
    diag["noisy_data"] = noisy
    rep.section("diagnostics", diag)
    f0_true, F_true = _truth(cfg, grid, variant)
    mask = mask_array(cfg, grid) if variant == "remark" else None
    if F_true is not None:
        metrics = error_metrics(res, grid, f0_true, F_true, mask)
        metrics["norm"] = f"relative L2 over the disk, polar grid {grid.nr}x{grid.nbeta}"
        rep.section("errors_vs_truth", metrics)
    rep.write(os.path.join(out, "recon_report.txt"))
    Fplot = np.nan_to_num(res.F)
    panels = [("recovered F" if variant != "solenoidal" else "recovered Fs", Fplot)]
    if F_true is not None:
        panels.append(("true" if variant != "solenoidal" else "true Fs", F_true))
    plot_vector(os.path.join(out, "F.png"), grid, panels, note=man)
    if res.f0 is not None:
        fp = [("recovered f0", res.f0)]
        if f0_true is not None:
            fp += [("true f0", f0_true), ("error", res.f0 - f0_true)]
        plot_fields(os.path.join(out, "f0.png"), grid, fp, note=man)
    timer.write(os.path.join(out, "timings.txt"), man)
    print(f"reconstruct ({variant}): range residual {res.diagnostics.get('range_residual', float('nan')):.3e}; "
          f"wrote {out}")
    return EXIT_OK


def cmd_gauge(cfg: Config, out: str) -> int:
    if cfg.source is None or cfg.source_tilde is None:
        raise ConfigError("gauge needs [source] (f0) and [source_tilde] (f0 and F) sections")
    if cfg.source.F_kind != "none":
        raise ConfigError("F in [source] is produced by the gauge construction; leave it out",
                          key="source.F")
    grid = cfg.grid()
    medium = cfg.medium(grid)
    man = manifest(cfg.sha256, cfg.seed)
    timer = Timer()
    tilde = cfg.source_tilde.build(grid)
    f0 = cfg.source.f0.evaluate(grid)
    pair = make_pair(f0, tilde.f0, tilde.F, medium)
    pert = None
    if np.any(pair.psi):
        g = gradient(pair.psi, grid)
        pert = np.stack([-g[1], g[0]])
    with timer("forward solves"):
        rep_d = gauge_verify(pair.first, pair.second, medium, cfg.directions(), tol=cfg.tol,
                             max_iter=cfg.max_iter, perturbation=pert, h_ray=cfg.ray_step(grid))
    gA, gB = rep_d.pop("_data")
    ensure_dir(out)
    gA.write_csv(os.path.join(out, "g_first.csv"), [man, "source (f0, F = F_tilde + grad psi)"])
    gB.write_csv(os.path.join(out, "g_second.csv"), [man, "source (f0_tilde, F_tilde)"])
    write_vector_csv(os.path.join(out, "F_partner.csv"), grid, pair.first.F, [man])
    write_field_csv(os.path.join(out, "psi.csv"), grid, pair.psi, [man, "(f0 - f0_tilde)/sigma_a"])
    rep = Report("gauge equivalence", man)
    rep.section("parameters", _parameters(cfg, grid, "gauge"))
    rep_d["norm"] = "sup and rms over boundary nodes x directions"
    rep.section("discrepancy", rep_d)
    rep.write(os.path.join(out, "gauge_report.txt"))
    plot_boundary_data(os.path.join(out, "gauge_discrepancy.png"), gA.values - gB.values,
                       "data difference between the gauge pair", note=man)
    timer.write(os.path.join(out, "timings.txt"), man)
    print(f"gauge: relative data discrepancy {rep_d['relative_discrepancy_sup']:.3e}; wrote {out}")
    return EXIT_OK


def poisson_manufactured(grid: PolarGrid) -> float:
    """Max error of the Poisson solver on a fixed smooth manufactured solution."""
    x, y = grid.z.real, grid.z.imag
    exact = np.exp(x) * np.sin(2 * y) + x**3 * y
    rhs = -3 * np.exp(x) * np.sin(2 * y) + 6 * x * y
    zb = grid.boundary.zeta
    bc = np.exp(zb.real) * np.sin(2 * zb.imag) + zb.real**3 * zb.imag
    return float(np.max(np.abs(poisson_dirichlet(rhs, bc, grid) - exact)))


def cmd_convergence(cfg: Config, out: str, levels: int | None, variant: str | None) -> int:
    levels = levels if levels is not None else cfg.levels
    if levels is None or levels < 2:
        raise UsageError("convergence needs --levels K with K >= 2")
    variant = variant or cfg.variant or "divfree"
    if variant not in ("solenoidal", "divfree"):
        raise UsageError("convergence round trips support variants solenoidal and divfree")
    man = manifest(cfg.sha256, cfg.seed)
    timer = Timer()
    rows = []
    h, pe, fe, f0e = [], [], [], []
    for lev in range(levels):
        grid = cfg.grid(lev)
        with timer(f"level {lev}"):
            p_err = poisson_manufactured(grid)
            F_err = f0_err = float("nan")
            if cfg.source is not None:
                src = cfg.source.build(grid)
                _, data, _ = _forward(cfg, grid, src)
                res, _ = _reconstruct(cfg, grid, variant, data)
                if variant == "solenoidal":
                    F_err = relative_l2(res.F, hodge_decompose(src.F, grid)[1], grid)
                else:
                    F_err = relative_l2(res.F, src.F, grid)
                    f0_err = relative_l2(res.f0, src.f0, grid)
        h.append(grid.dr)
        pe.append(p_err)
        fe.append(F_err)
        f0e.append(f0_err)
    for lev in range(levels):
        order = np.log2(pe[lev - 1] / pe[lev]) if lev else float("nan")
        grid = cfg.grid(lev)
        rows.append([lev, grid.nr, grid.nbeta, cfg.ntheta, pe[lev], order, fe[lev], f0e[lev]])
    header = ["level", "Nr", "Nbeta", "Ntheta", "poisson_max_error", "poisson_order",
              "recon_F_rel_l2", "recon_f0_rel_l2"]
    ensure_dir(out)
    with open(os.path.join(out, "convergence.csv"), "w") as fh:
        fh.write(f"# {man}\n# variant={variant}\n")
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(v) for v in r) + "\n")
    rep = Report("convergence study", man)
    rep.section("parameters", _parameters(cfg, cfg.grid(), "convergence") | {"levels": levels,
                                                                              "variant": variant})
    rep.table("errors", header, rows)
    rep.write(os.path.join(out, "convergence_report.txt"))
    series = {"Poisson (max)": pe}
    if cfg.source is not None:
        series["recovered F (rel L2)"] = fe
        if variant == "divfree":
            series["recovered f0 (rel L2)"] = f0e
    plot_convergence(os.path.join(out, "convergence.png"), np.array(h), series, "grid refinement",
                     note=man)
    timer.write(os.path.join(out, "timings.txt"), man)
    print(f"convergence: {levels} levels; wrote {out}")
    return EXIT_OK


def cmd_selftest(out: str | None) -> int:
    from .selftest import run_selftest
    ok, rep = run_selftest()
    if out:
        ensure_dir(out)
        rep.write(os.path.join(out, "selftest_report.txt"))
    return EXIT_OK if ok else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtinverse",
                                description="Transport forward solver and source reconstruction on the unit disk.")
    p.add_argument("--version", action="version", version=f"rtinverse {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="experiment configuration file")
        sp.add_argument("--out", help="output directory (overrides [run] out)")
        sp.add_argument("--seed", type=int, help="random seed, unsigned 64-bit (overrides [run] seed)")

    common(sub.add_parser("forward", help="solve the forward problem and write boundary data"))
    sp = sub.add_parser("reconstruct", help="recover the source from boundary data")
    common(sp)
    sp.add_argument("--variant", choices=VARIANTS, help="reconstruction pipeline")
    sp.add_argument("--data", help="boundary data CSV")
    sp.add_argument("--data2", help="second data CSV (isotropic source only) for twodata")
    common(sub.add_parser("gauge", help="build and verify a gauge-equivalent source pair"))
    sp = sub.add_parser("convergence", help="error versus grid refinement")
    common(sp)
    sp.add_argument("--levels", type=int, help="number of grid levels (>= 2)")
    sp.add_argument("--variant", choices=("solenoidal", "divfree"))
    sp = sub.add_parser("selftest", help="quick built-in checks")
    sp.add_argument("--out", help="directory for the self-test report")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _set_threads()
        if args.command == "selftest":
            return cmd_selftest(args.out)
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise UsageError("--seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        out = args.out or cfg.out or "out"
        if cfg.command and cfg.command != args.command:
            log.warning("config [run] command = %s ignored; running %s", cfg.command, args.command)
        if args.command == "forward":
            return cmd_forward(cfg, out)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, out, args.variant or cfg.variant or "", args.data, args.data2)
        if args.command == "gauge":
            return cmd_gauge(cfg, out)
        if args.command == "convergence":
            return cmd_convergence(cfg, out, args.levels, args.variant)
    except (ConfigError, UsageError) as exc:
        print(f"rtinverse: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"rtinverse: solver divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except DataConsistencyError as exc:
        print(f"rtinverse: data consistency failure: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (PreconditionError, HAccuracyError, NearBoundaryError, OutOfDomainError) as exc:
        print(f"rtinverse: precondition failure: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
