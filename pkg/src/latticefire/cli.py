"""Command-line entry point: ``latticefire <subcommand> [flags]``.

Results go to standard output, or into ``--out DIR`` together with a
``manifest.txt`` of ``key=value`` lines.  Exit codes: 0 success, 1 failed
check or estimate, 2 usage error.
"""
from __future__ import annotations

import argparse
import io
import math
import sys
from pathlib import Path

from . import cell_events as ce
from . import surface as sf
from .coupling import CouplingViolation, coupled_density_run, coupled_recovery_run
from .dynamics import InvariantViolation, SimState, TrialParams, evolve, outcome_of, parse_lambda
from .errors import EstimationError, KernelError, ParameterError, PreconditionError, RangeError
from .harness import (ExperimentSpec, _fmt, environment, manifest_text, sweep, sweep_csv, sweep_manifest,
                      thinning_manifest, verify_thinning)
from .rng import derive_seed
from .tessellation import TessellationParams

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _lambdas(text: str) -> tuple:
    return tuple(parse_lambda(v) for v in text.split(","))


def _add_model(p, rho_grid=False):
    p.add_argument("--rho", type=_floats if rho_grid else float, default=(1.0,) if rho_grid else 1.0)
    p.add_argument("--lambda", dest="lam", type=_lambdas if rho_grid else parse_lambda,
                   default=(math.inf,) if rho_grid else math.inf)
    p.add_argument("--variant", choices=("contact", "jump"), default="contact")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--L", type=int, default=11)
    p.add_argument("--horizon", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)


def _add_constants(p):
    for flag in ("--c-acc", "--c-good", "--c1", "--c2", "--alpha0"):
        p.add_argument(flag, type=float, default=1.0)


def _add_cells(p, ell=8, beta=1, eta=1):
    p.add_argument("--ell", type=int, default=ell)
    p.add_argument("--beta", type=int, default=beta)
    p.add_argument("--eta", type=int, default=eta)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="latticefire", description="Infection with recovery among random walkers on Z^d.")
    sub = top.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="one run to the horizon")
    _add_model(p)
    p.add_argument("--events", action="store_true", help="also write the full event log")
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="survival and local survival over a (rho, lambda) grid")
    _add_model(p, rho_grid=True)
    p.add_argument("--replicas", type=int, default=100)
    p.add_argument("--K-visits", dest="K_visits", type=int, default=5)
    p.add_argument("--strict-boundary", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("check-cells", help="indicator fields of the cell events on a base window")
    _add_model(p)
    _add_cells(p, ell=3, beta=2, eta=None)
    p.add_argument("--axis", type=int, default=1)
    p.add_argument("--h-max", dest="h_max", type=int, default=2)
    p.add_argument("--width", type=int, default=0, help="half-width of the non-height spatial base axes")
    p.add_argument("--tau-count", dest="tau_count", type=int, default=2, help="time layers 1..tau-count")
    p.add_argument("--out")

    p = sub.add_parser("surface", help="minimal two-sided surface of a field file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--in-down", dest="inp_down")
    p.add_argument("--out")

    p = sub.add_parser("verify-thinning", help="Poisson thinning laws of the transit counts")
    p.add_argument("--rho", type=float, default=2.0)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("bounds", help="closed-form bounds")
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=parse_lambda, default=0.0)
    p.add_argument("--d", type=int, default=1)
    _add_cells(p)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--nu-hat", dest="nu_hat", type=float)
    _add_constants(p)
    p.add_argument("--out")

    p = sub.add_parser("coupling-check", help="coupled pairs with dominance and containment checks")
    _add_model(p)
    p.add_argument("--rho-prime", dest="rho_prime", type=float)
    p.add_argument("--replicas", type=int, default=100)
    p.add_argument("--horizon-pairs", dest="horizon_pairs", type=float)
    p.add_argument("--out")
    return top


# -- output --------------------------------------------------------------------------

class Output:
    """Collects named text outputs; writes them to ``out`` or standard output."""

    def __init__(self, out: str | None):
        self.dir = Path(out) if out else None
        self.files: list[tuple[str, str]] = []

    def add(self, name: str, text: str):
        self.files.append((name, text))

    def flush(self, manifest: dict):
        if self.dir is None:
            for name, text in self.files:
                if len(self.files) > 1:
                    sys.stdout.write(f"# {name}\n")
                sys.stdout.write(text)
            return
        self.dir.mkdir(parents=True, exist_ok=True)
        for name, text in self.files:
            (self.dir / name).write_text(text)
        (self.dir / "manifest.txt").write_text(manifest_text(manifest))


def _model_manifest(a) -> dict:
    return {"rho": _fmt(a.rho), "lambda": _fmt(a.lam), "variant": a.variant, "d": str(a.d), "L": str(a.L),
            "horizon": _fmt(a.horizon), "seed": str(a.seed)}


# -- subcommands ---------------------------------------------------------------------

def cmd_simulate(a) -> int:
    params = TrialParams(a.rho, lam=a.lam, d=a.d, L=a.L, horizon=a.horizon, variant=a.variant)
    state = SimState(params, a.seed, stop_on_extinction=True, log_events=a.events)
    evolve(state, params.horizon)
    out = outcome_of(state)
    lines = [f"survived_to_horizon={out.survived_to_horizon}",
             f"extinct_at={_fmt(out.extinct_at)}",
             f"boundary_contaminated={out.boundary_contaminated}",
             f"n_events={out.n_events}",
             f"n_particles={state.n}",
             f"origin_intervals={len(out.origin_infected_intervals)}"]
    o = Output(a.out)
    o.add("outcome.txt", "\n".join(lines) + "\n")
    o.add("origin_intervals.csv", "start,end\n" + "".join(f"{s!r},{e!r}\n" for s, e in out.origin_infected_intervals))
    if a.events:
        body = "".join(f"{t!r},{p},{k},{dr},{inf},{n}\n" for t, p, k, dr, inf, n in state.event_log)
        o.add("events.csv", "time,particle,kind,direction,infected,n_infected\n" + body)
    o.flush({"command": "simulate", **_model_manifest(a), **environment()})
    return EXIT_OK


def cmd_sweep(a) -> int:
    spec = ExperimentSpec(rho=a.rho, lam=a.lam, d=a.d, L=a.L, variant=a.variant, horizon=a.horizon,
                          replicas=a.replicas, master_seed=a.seed, K_visits=a.K_visits,
                          strict_boundary=a.strict_boundary)
    rows = sweep(spec)
    o = Output(a.out)
    o.add("sweep.csv", sweep_csv(spec, rows))
    o.flush(sweep_manifest(spec, rows))
    return EXIT_FAIL if any(r.error for r in rows) else EXIT_OK


def cell_fields(a) -> tuple[dict, TrialParams]:
    """Indicator fields of every cell event on the requested base window, both sides.

    The simulated window (side, duration, margin) is derived from the cell
    geometry; ``--L`` and ``--horizon`` are ignored.
    """
    if a.eta is None:
        # the composite event reads cells up to 4d + 4 cells away
        a.eta = 4 * a.d + 4
    params = TessellationParams(a.ell, a.beta, a.eta, a.d)
    if not 1 <= a.axis <= a.d or a.h_max < 0 or a.width < 0 or a.tau_count < 1:
        raise ParameterError("need 1 <= axis <= d, h_max >= 0, width >= 0 and tau-count >= 1")
    T = float(a.ell) ** (5.0 / 3.0)
    t_needed = (a.tau_count + 3 + a.eta) * a.beta + T
    reach_cells = a.h_max + a.width + a.d + 4 + a.eta
    L = 2 * reach_cells * a.ell + 1
    trial = TrialParams(a.rho, lam=a.lam, d=a.d, L=L, horizon=t_needed,
                        halo_margin=ce.reach_radius(t_needed))
    state = SimState(trial, a.seed, add_origin_particle=False)
    trace = state.trace_universe(t_needed)
    ctx = ce.CellCheckContext(trace, params, a.lam)
    paths: dict = {}

    def path(cell):
        if cell not in paths:
            paths[cell] = ce.sample_distinguished_path(cell, a.lam, a.beta, ce.distinguished_stream(a.seed, cell))
        return paths[cell]

    events = {
        "acceptable": lambda c: ce.is_acceptable(c, ctx),
        "good": lambda c: ce.is_good_cell(c, ctx, path),
        "E": lambda c: ce.holds_E(c, ctx, path),
        "E_tilde": lambda c: ce.holds_E_tilde(c, trace, params),
    }
    lo = (-a.width,) * (a.d - 1) + (1,)
    shape = (2 * a.width + 1,) * (a.d - 1) + (a.tau_count,)
    meta = {"d": a.d, "ell": a.ell, "beta": a.beta, "eta": a.eta, "axis": a.axis}
    out = {}
    for name, ev in events.items():
        memo: dict = {}

        def cached(c, ev=ev, memo=memo):
            if c not in memo:
                memo[c] = ev(c)
            return memo[c]
        for sign, tag in ((1, "plus"), (-1, "minus")):
            out[f"{name}_{tag}"] = sf.field_from_events(cached, lo, shape, a.h_max, a.axis, sign, meta)
    return out, trial


def cmd_check_cells(a) -> int:
    fields, trial = cell_fields(a)
    o = Output(a.out)
    for name, fld in fields.items():
        o.add(f"{name}.txt", sf.field_to_text(fld))
    a.L, a.horizon = trial.L, trial.horizon
    o.flush({"command": "check-cells", **_model_manifest(a), "halo_margin": str(trial.halo_margin),
             "ell": str(a.ell), "beta": str(a.beta), "eta": str(a.eta), "axis": str(a.axis), "h_max": str(a.h_max), "width": str(a.width),
             "tau_count": str(a.tau_count), **environment()})
    return EXIT_OK


def _report_text(side: str, rep: sf.PercolationReport) -> str:
    return (f"percolation.{side}.components={rep.n_components}\npercolation.{side}.largest={rep.largest}\n"
            f"percolation.{side}.spans={rep.spans}\n")


def cmd_surface(a) -> int:
    with open(a.inp) as fh:
        up = sf.read_field(fh)
    if a.inp_down:
        with open(a.inp_down) as fh:
            down = sf.read_field(fh)
    else:
        down = up
    res = sf.extract_two_sided(up, down)
    o = Output(a.out)
    if isinstance(res, sf.Infeasible):
        o.add("surface.txt", f"infeasible side={res.side} column={' '.join(map(str, res.column))}\n")
    else:
        buf = io.StringIO()
        sf.write_surface(res, buf, up.meta, up.h_max)
        o.add("surface.txt", buf.getvalue())
        report = _report_text("plus", sf.zero_height_percolation(res.F_plus))
        report += _report_text("minus", sf.zero_height_percolation(res.F_minus))
        if all(lo <= 0 < lo + n for lo, n in zip(res.lo, res.F_plus.shape)):
            report += f"surrounds_origin={sf.surrounds_origin(res)}\n"
        o.add("report.txt", report)
    o.flush({"command": "surface", "in": a.inp, "in_down": str(a.inp_down), **environment()})
    return EXIT_OK


def cmd_verify_thinning(a) -> int:
    report = verify_thinning(a.rho, a.d, a.samples, a.seed)
    o = Output(a.out)
    o.add("thinning.txt", report.text())
    o.flush(thinning_manifest(report))
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_bounds(a) -> int:
    inputs = ce.BoundInputs(a.rho, a.lam, a.ell, a.beta, a.eta, a.d, a.c1, a.c2, a.c_acc, a.c_good, a.alpha0)
    vals = {
        "good_point_probability": ce.good_point_probability(a.rho, a.d),
        "bound_acceptable": ce.bound_acceptable(inputs),
        "bound_good": ce.bound_good(inputs),
        "bound_E_tilde_complement": ce.bound_E_tilde_complement(inputs),
        "omega_lower_bound": ce.omega_lower_bound(a.eta, a.beta, a.ell, a.epsilon, a.c1, a.c2),
    }
    lines = [f"{k}={v:.6g}" for k, v in vals.items()]
    if a.nu_hat is not None:
        lines.append(f"check_hypotheses={ce.check_hypotheses(a.epsilon, a.rho, a.ell, a.nu_hat, a.alpha0, a.d)}")
    consts = {"c1": a.c1, "c2": a.c2, "c_acc": a.c_acc, "c_good": a.c_good, "alpha0": a.alpha0}
    lines += [f"constant.{k}={_fmt(v)}" for k, v in consts.items()]
    o = Output(a.out)
    o.add("bounds.txt", "\n".join(lines) + "\n")
    o.flush({"command": "bounds", "rho": _fmt(a.rho), "lambda": _fmt(a.lam), "d": str(a.d), "ell": str(a.ell),
             "beta": str(a.beta), "eta": str(a.eta), "epsilon": _fmt(a.epsilon), "nu_hat": _fmt(a.nu_hat),
             **{f"constant.{k}": _fmt(v) for k, v in consts.items()},
             **{k: repr(v) for k, v in vals.items()}, **environment()})
    return EXIT_OK


def cmd_coupling_check(a) -> int:
    horizon = a.horizon if a.horizon_pairs is None else a.horizon_pairs
    rho_prime = 2 * a.rho if a.rho_prime is None else a.rho_prime
    lam_pair = a.lam if 0 < a.lam < math.inf else 1.0
    rows = ["kind,replica,low_survived,high_survived,implication,checks"]
    failed = 0
    for r in range(a.replicas):
        seed = derive_seed(a.seed, r)
        for kind, run in (("density", lambda: coupled_density_run(a.rho, rho_prime, seed, horizon, d=a.d, L=a.L,
                                                                  variant=a.variant)),
                          ("recovery", lambda: coupled_recovery_run(a.rho, lam_pair, seed, horizon, d=a.d, L=a.L,
                                                                    variant=a.variant))):
            try:
                pair = run()
            except CouplingViolation as exc:
                rows.append(f"{kind},{r},,,violation: {exc},")
                failed += 1
                continue
            ok = pair.survival_implication_holds()
            failed += not ok
            rows.append(f"{kind},{r},{pair.low_survived()},{pair.high_survived()},{ok},{pair.checks}")
    o = Output(a.out)
    o.add("coupling.csv", "\n".join(rows) + "\n")
    o.add("summary.txt", f"pairs={2 * a.replicas}\nfailures={failed}\n{'PASS' if not failed else 'FAIL'}\n")
    o.flush({"command": "coupling-check", **_model_manifest(a), "rho_prime": _fmt(rho_prime),
             "lambda_pair": _fmt(lam_pair), "replicas": str(a.replicas), "horizon_pairs": _fmt(horizon),
             **environment()})
    return EXIT_OK if not failed else EXIT_FAIL


COMMANDS = {
    "simulate": cmd_simulate, "sweep": cmd_sweep, "check-cells": cmd_check_cells, "surface": cmd_surface,
    "verify-thinning": cmd_verify_thinning, "bounds": cmd_bounds, "coupling-check": cmd_coupling_check,
}


def cli_main(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return COMMANDS[a.command](a)
    except (ParameterError, PreconditionError, RangeError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EstimationError, InvariantViolation, KernelError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
