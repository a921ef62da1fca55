"""Experiment harness: scheme comparisons, resolution sweeps, and
integrator convergence studies driven by JSON config files.

Subcommands::

    shootopt compare --config cfg.json [--out DIR] [--ref-multiplier K]
    shootopt sweep   --config cfg.json [--out DIR] [--plot] [--ref-multiplier K]
    shootopt study   --config cfg.json [--out DIR]

Each run writes a CSV (header
``problem,scheme,N,h,eta_total,solve_time_s,outer_iters,inner_iters,status``,
floats serialized with 17 significant digits) plus an
``effective-config.json`` that materializes every default next to the
outputs, so results are reproducible from the output directory alone.
Identical configs produce identical CSVs, except for the wall-clock
``solve_time_s`` column.

Exit codes: 0 when every solve (including the reference) reports optimal,
2 for configuration errors, 3 when at least one solve is non-optimal.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .analysis import (
    convergence_study,
    damped_velocity_flow,
    damped_velocity_system,
    euler_bound,
    reconstruct,
    rk4_bound,
    total_error,
)
from .dynamics import BENCHMARK_NAMES, make_benchmark
from .errors import ConfigError
from .ocp import (
    OptimalControlProblem,
    QuadraticStageCost,
    QuadraticTerminalCost,
    build_nlp,
)
from .solver import SolveStatus, SolverOptions, solve
from .svgchart import line_chart_svg
from .transcription import Scheme

__all__ = ["RunConfig", "RunRow", "run_compare", "run_sweep",
           "run_integrator_study", "main"]

SCHEME_NAMES = ("1st-euler", "2nd-euler", "1st-rk4", "2nd-rk4")
CSV_HEADER = "problem,scheme,N,h,eta_total,solve_time_s,outer_iters,inner_iters,status"


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{float(x):.17g}"


def _as_matrix(field: str, value, size: int) -> np.ndarray:
    """Accept a diagonal (length-size list) or a full size x size matrix."""
    arr = np.asarray(value, dtype=float)
    if arr.shape == (size,):
        return np.diag(arr)
    if arr.shape == (size, size):
        return arr
    raise ConfigError(
        f"config field '{field}' must be a length-{size} diagonal or a "
        f"{size}x{size} matrix, got shape {arr.shape}"
    )


def _as_vector(field: str, value, size: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (size,):
        raise ConfigError(
            f"config field '{field}' must be a length-{size} vector, "
            f"got shape {arr.shape}"
        )
    return arr


_TOP_KEYS = {
    "metadata", "problem", "tf", "N", "N_list", "schemes", "params", "cost",
    "boundary", "control_bounds", "state_bounds", "solver", "out_dir",
    "plot", "ref_multiplier", "study",
}


@dataclass(frozen=True)
class RunConfig:
    """Validated experiment description (one JSON file per experiment)."""

    problem: str
    tf: float
    n_list: tuple
    schemes: tuple
    params: dict
    cost: dict
    initial: np.ndarray
    terminal: np.ndarray
    terminal_mask: np.ndarray
    control_lower: np.ndarray
    control_upper: np.ndarray
    state_lower: np.ndarray
    state_upper: np.ndarray
    solver_overrides: dict
    out_dir: str
    plot: bool
    ref_multiplier: int
    metadata: dict
    study: dict

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config field '{sorted(unknown)[0]}'")

        study = raw.get("study") or {}
        if study:
            bad = set(study) - {"rate", "drive", "u", "q0", "v0"}
            if bad:
                raise ConfigError(f"unknown config field 'study.{sorted(bad)[0]}'")
            study = {
                "rate": float(study.get("rate", 1.0)),
                "drive": float(study.get("drive", 1.0)),
                "u": float(study.get("u", 0.0)),
                "q0": float(study.get("q0", 0.0)),
                "v0": float(study.get("v0", 1.0)),
            }
            if study["rate"] <= 0:
                raise ConfigError("config field 'study.rate' must be positive")

        problem = raw.get("problem", "")
        params = raw.get("params", {}) or {}
        system = None
        if problem or not study:
            if problem not in BENCHMARK_NAMES:
                raise ConfigError(
                    f"config field 'problem' must be one of "
                    f"{', '.join(BENCHMARK_NAMES)}; got '{problem}'"
                )
            system = make_benchmark(problem, params)

        if "tf" not in raw:
            raise ConfigError("config field 'tf' is required")
        tf = float(raw["tf"])
        if tf <= 0:
            raise ConfigError("config field 'tf' must be positive")

        if "N" in raw and "N_list" in raw:
            raise ConfigError("config fields 'N' and 'N_list' are exclusive")
        if "N" in raw:
            n_list = (int(raw["N"]),)
        elif "N_list" in raw:
            n_list = tuple(int(v) for v in raw["N_list"])
        else:
            raise ConfigError("config needs field 'N' or 'N_list'")
        if not n_list or any(n < 1 for n in n_list):
            raise ConfigError("config field 'N'/'N_list' entries must be >= 1")

        schemes = tuple(raw.get("schemes", ()))
        if not schemes:
            raise ConfigError("config field 'schemes' must list at least one scheme")
        for name in schemes:
            if name not in SCHEME_NAMES:
                raise ConfigError(
                    f"config field 'schemes' holds unknown scheme '{name}'; "
                    f"valid: {', '.join(SCHEME_NAMES)}"
                )

        if system is not None:
            n_x, n_u = 2 * system.n_q, system.n_u
        else:
            n_x, n_u = 2, 1

        cost_raw = dict(raw.get("cost", {}) or {})
        bad = set(cost_raw) - {"Q", "R", "Qf", "x_ref", "u_ref", "terminal_x_ref"}
        if bad:
            raise ConfigError(f"unknown config field 'cost.{sorted(bad)[0]}'")
        cost = {
            "Q": _as_matrix("cost.Q", cost_raw.get("Q", np.zeros(n_x)), n_x),
            "R": _as_matrix("cost.R", cost_raw.get("R", np.ones(n_u)), n_u),
            "Qf": _as_matrix("cost.Qf", cost_raw.get("Qf", np.zeros(n_x)), n_x),
            "x_ref": _as_vector("cost.x_ref", cost_raw.get("x_ref", np.zeros(n_x)), n_x),
            "u_ref": _as_vector("cost.u_ref", cost_raw.get("u_ref", np.zeros(n_u)), n_u),
        }
        cost["terminal_x_ref"] = _as_vector(
            "cost.terminal_x_ref", cost_raw.get("terminal_x_ref", cost["x_ref"]), n_x
        )

        boundary = dict(raw.get("boundary", {}) or {})
        bad = set(boundary) - {"initial", "terminal"}
        if bad:
            raise ConfigError(f"unknown config field 'boundary.{sorted(bad)[0]}'")
        initial = _as_vector("boundary.initial",
                             boundary.get("initial", np.zeros(n_x)), n_x)
        term_raw = boundary.get("terminal")
        if term_raw is None:
            terminal = np.zeros(n_x)
            terminal_mask = np.zeros(n_x, dtype=bool)
        else:
            if len(term_raw) != n_x:
                raise ConfigError(
                    f"config field 'boundary.terminal' must have length {n_x}"
                )
            terminal_mask = np.array([v is not None for v in term_raw])
            terminal = np.array([0.0 if v is None else float(v) for v in term_raw])

        def bounds(field, size):
            sec = raw.get(field)
            if sec is None:
                return None, None
            bad = set(sec) - {"lower", "upper"}
            if bad:
                raise ConfigError(f"unknown config field '{field}.{sorted(bad)[0]}'")
            lo = _as_vector(f"{field}.lower", sec.get("lower", [-np.inf] * size), size)
            hi = _as_vector(f"{field}.upper", sec.get("upper", [np.inf] * size), size)
            return lo, hi

        control_lower, control_upper = bounds("control_bounds", n_u)
        state_lower, state_upper = bounds("state_bounds", n_x)

        solver_raw = dict(raw.get("solver", {}) or {})
        valid_opts = {f.name for f in dataclasses.fields(SolverOptions)}
        bad = set(solver_raw) - valid_opts
        if bad:
            raise ConfigError(f"unknown config field 'solver.{sorted(bad)[0]}'")

        ref_multiplier = int(raw.get("ref_multiplier", 8))
        if ref_multiplier < 2:
            raise ConfigError("config field 'ref_multiplier' must be >= 2")

        return RunConfig(
            problem=problem,
            tf=tf,
            n_list=n_list,
            schemes=schemes,
            params=dict(params),
            cost=cost,
            initial=initial,
            terminal=terminal,
            terminal_mask=terminal_mask,
            control_lower=control_lower,
            control_upper=control_upper,
            state_lower=state_lower,
            state_upper=state_upper,
            solver_overrides=solver_raw,
            out_dir=str(raw.get("out_dir", "./out")),
            plot=bool(raw.get("plot", False)),
            ref_multiplier=ref_multiplier,
            metadata=dict(raw.get("metadata", {}) or {}),
            study=study,
        )

    @staticmethod
    def load(path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {path} is not valid JSON: {err}")
        return RunConfig.from_dict(raw)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.solver_overrides)

    def build_problem(self, n: int) -> OptimalControlProblem:
        system = make_benchmark(self.problem, self.params)
        return OptimalControlProblem(
            system=system,
            tf=self.tf,
            N=n,
            stage_cost=QuadraticStageCost(
                Q=self.cost["Q"], R=self.cost["R"],
                x_ref=self.cost["x_ref"], u_ref=self.cost["u_ref"],
            ),
            terminal_cost=QuadraticTerminalCost(
                Qf=self.cost["Qf"], x_ref=self.cost["terminal_x_ref"],
            ),
            initial_state=self.initial,
            terminal_state=self.terminal,
            terminal_mask=self.terminal_mask,
            control_lower=self.control_lower,
            control_upper=self.control_upper,
            state_lower=self.state_lower,
            state_upper=self.state_upper,
        )

    def effective_dict(self) -> dict:
        """Every default materialized, for the effective-config output."""
        opts = self.solver_options()
        out = {
            "metadata": self.metadata,
            "problem": self.problem,
            "tf": self.tf,
            "N_list": list(self.n_list),
            "schemes": list(self.schemes),
            "params": (dict(make_benchmark(self.problem, self.params).params)
                       if self.problem else {}),
            "cost": {k: np.asarray(v).tolist() for k, v in self.cost.items()},
            "boundary": {
                "initial": self.initial.tolist(),
                "terminal": [
                    (float(v) if m else None)
                    for v, m in zip(self.terminal, self.terminal_mask)
                ],
            },
            "control_bounds": None if self.control_lower is None else {
                "lower": self.control_lower.tolist(),
                "upper": self.control_upper.tolist(),
            },
            "state_bounds": None if self.state_lower is None else {
                "lower": self.state_lower.tolist(),
                "upper": self.state_upper.tolist(),
            },
            "solver": dataclasses.asdict(opts),
            "out_dir": self.out_dir,
            "plot": self.plot,
            "ref_multiplier": self.ref_multiplier,
        }
        if self.study:
            out["study"] = dict(self.study)
        return out


@dataclass
class RunRow:
    """One CSV row plus the full solve report for programmatic use."""

    problem: str
    scheme: str
    N: int
    h: float
    eta_total: float
    solve_time_s: float
    outer_iters: int
    inner_iters: int
    status: str
    report: object = None
    final_feasibility: float = np.nan

    def csv(self) -> str:
        return ",".join([
            self.problem, self.scheme, str(self.N), _fmt(self.h),
            _fmt(self.eta_total), _fmt(self.solve_time_s),
            str(self.outer_iters), str(self.inner_iters), self.status,
        ])


def _solve_case(config: RunConfig, scheme_name: str, n: int):
    problem = config.build_problem(n)
    nlp = build_nlp(problem, Scheme.from_name(scheme_name))
    z, report = solve(nlp, config.solver_options(), np.zeros(nlp.n_vars))
    spline = reconstruct(nlp.unpack(z))
    return spline, report


def _reference_spline(config: RunConfig):
    """High-resolution velocity-aware RK4 solve treated as the truth."""
    n_ref = config.ref_multiplier * max(config.n_list)
    spline, report = _solve_case(config, "2nd-rk4", n_ref)
    return spline, report, n_ref


def _write_outputs(config: RunConfig, out_dir: Path, rows, csv_name: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / csv_name
    with open(csv_path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.csv() + "\n")
    with open(out_dir / "effective-config.json", "w") as fh:
        json.dump(config.effective_dict(), fh, indent=2)
        fh.write("\n")
    return csv_path


def run_compare(config: RunConfig, out_dir=None):
    """Solve every configured scheme at N, score each against the shared
    high-resolution reference, and write one CSV row per scheme.

    Per-row solve failures are recorded (status column, empty error cells)
    and the run continues.  Returns ``(rows, all_optimal)``.
    """
    if len(config.n_list) != 1:
        raise ConfigError("compare needs a single 'N' (use sweep for 'N_list')")
    out_dir = Path(out_dir or config.out_dir)
    n = config.n_list[0]
    reference, ref_report, n_ref = _reference_spline(config)
    ref_ok = ref_report.status == SolveStatus.OPTIMAL
    all_ok = ref_ok
    if not ref_ok:
        print(f"warning: reference solve (N={n_ref}) ended "
              f"{ref_report.status.value}", file=sys.stderr)
    rows = []
    for scheme_name in config.schemes:
        spline, report = _solve_case(config, scheme_name, n)
        ok = report.status == SolveStatus.OPTIMAL
        all_ok = all_ok and ok
        eta = (total_error(spline, reference, reference_N=n_ref).eta_total
               if ok and ref_ok else None)
        rows.append(RunRow(
            problem=config.problem, scheme=scheme_name, N=n, h=config.tf / n,
            eta_total=eta, solve_time_s=report.wall_time,
            outer_iters=report.outer_iters, inner_iters=report.inner_iters,
            status=report.status.value, report=report,
            final_feasibility=report.final_feasibility,
        ))
        print(f"{config.problem} {scheme_name} N={n}: status={report.status.value}"
              f" eta_total={_fmt(eta) or 'n/a'} time={report.wall_time:.3f}s")
    _write_outputs(config, out_dir, rows, "compare.csv")
    return rows, all_ok


def run_sweep(config: RunConfig, out_dir=None):
    """Compare schemes across every N in the config's 'N_list'.

    Jobs run in deterministic (scheme, N) order; the optional plot is a
    log-log SVG of eta_total versus N with one series per scheme.
    """
    if len(config.n_list) < 2:
        raise ConfigError("sweep needs an 'N_list' with at least two entries")
    out_dir = Path(out_dir or config.out_dir)
    reference, ref_report, n_ref = _reference_spline(config)
    ref_ok = ref_report.status == SolveStatus.OPTIMAL
    all_ok = ref_ok
    if not ref_ok:
        print(f"warning: reference solve (N={n_ref}) ended "
              f"{ref_report.status.value}", file=sys.stderr)
    rows = []
    for scheme_name in config.schemes:
        for n in sorted(config.n_list):
            spline, report = _solve_case(config, scheme_name, n)
            ok = report.status == SolveStatus.OPTIMAL
            all_ok = all_ok and ok
            eta = (total_error(spline, reference, reference_N=n_ref).eta_total
                   if ok and ref_ok else None)
            rows.append(RunRow(
                problem=config.problem, scheme=scheme_name, N=n,
                h=config.tf / n, eta_total=eta, solve_time_s=report.wall_time,
                outer_iters=report.outer_iters, inner_iters=report.inner_iters,
                status=report.status.value, report=report,
                final_feasibility=report.final_feasibility,
            ))
            print(f"{config.problem} {scheme_name} N={n}: "
                  f"status={report.status.value} eta_total={_fmt(eta) or 'n/a'}"
                  f" time={report.wall_time:.3f}s")
    _write_outputs(config, out_dir, rows, "sweep.csv")
    if config.plot:
        series = {}
        for scheme_name in config.schemes:
            pts = [(row.N, row.eta_total) for row in rows
                   if row.scheme == scheme_name and row.eta_total is not None]
            if pts:
                series[scheme_name] = pts
        svg = line_chart_svg(
            series, "time intervals N", "total transcription error",
            f"{config.problem}: transcription error vs N",
        )
        with open(out_dir / "sweep.svg", "w") as fh:
            fh.write(svg)
    return rows, all_ok


def run_integrator_study(config: RunConfig, out_dir=None):
    """Measured convergence slopes on the analytic damped-velocity system,
    with the closed-form error-bound value tabulated per h.

    Writes ``study.csv`` with header ``scheme,N,h,error,bound,slope``.
    """
    if not config.study:
        raise ConfigError("study needs a 'study' config section")
    if len(config.n_list) < 3:
        raise ConfigError("study needs an 'N_list' with at least three entries")
    out_dir = Path(out_dir or config.out_dir)
    st = config.study
    system = damped_velocity_system(st["rate"], st["drive"])
    x0 = [st["q0"], st["v0"]]

    def exact(t):
        return damped_velocity_flow(st["rate"], st["drive"], st["q0"], st["v0"],
                                    st["u"], t)[0]

    # tightest hand constants for this flow: the velocity decays as
    # exp(-rate*t) toward drive*u/rate, so successive derivatives are
    # proportional with factor rate
    big_l = st["rate"]
    amp = abs(st["v0"] - st["drive"] * st["u"] / st["rate"])
    alpha = st["rate"] ** 2 * amp
    beta = st["rate"] ** 5 * amp

    results = {}
    lines = ["scheme,N,h,error,bound,slope"]
    for scheme_name in config.schemes:
        res = convergence_study(system, Scheme.from_name(scheme_name),
                                list(config.n_list), tf=config.tf, x0=x0,
                                u=[st["u"]], exact=exact)
        results[scheme_name] = res
        bound_fn = rk4_bound if scheme_name.endswith("rk4") else euler_bound
        coeff = beta if scheme_name.endswith("rk4") else alpha
        print(f"{scheme_name}: slope = {res.slope:.3f}")
        for n, h, err in zip(res.n_list, res.h_list, res.errors):
            bnd = bound_fn(big_l, coeff, config.tf, h)
            print(f"  N={n:5d} h={h:.6g} error={err:.6e} bound={bnd:.6e}")
            lines.append(
                f"{scheme_name},{n},{_fmt(h)},{_fmt(err)},{_fmt(bnd)},"
                f"{_fmt(res.slope)}"
            )
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "study.csv", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(out_dir / "effective-config.json", "w") as fh:
        json.dump(config.effective_dict(), fh, indent=2)
        fh.write("\n")
    return results


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shootopt",
        description="trajectory-optimization experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("compare", "solve each scheme at one N and tabulate errors"),
        ("sweep", "compare schemes across a list of N values"),
        ("study", "integrator convergence study on the analytic test system"),
    ]:
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--config", required=True, help="JSON config path")
        cmd.add_argument("--out", default=None, help="output directory "
                         "(default ./out or the config's out_dir)")
        cmd.add_argument("--plot", action="store_true", default=None,
                         help="also write an SVG chart (sweep only)")
        cmd.add_argument("--ref-multiplier", type=int, default=None,
                         help="reference resolution multiple of the largest N"
                              " (default 8)")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = RunConfig.load(args.config)
        if args.ref_multiplier is not None:
            if args.ref_multiplier < 2:
                raise ConfigError("--ref-multiplier must be >= 2")
            config = replace(config, ref_multiplier=args.ref_multiplier)
        if args.plot is not None:
            config = replace(config, plot=args.plot)
        out_dir = args.out if args.out is not None else config.out_dir
        if args.command == "compare":
            _, all_ok = run_compare(config, out_dir)
            return 0 if all_ok else 3
        if args.command == "sweep":
            _, all_ok = run_sweep(config, out_dir)
            return 0 if all_ok else 3
        run_integrator_study(config, out_dir)
        return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
