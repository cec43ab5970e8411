"""Command-line front end: ``kvflow convergence | decay | boundedness | selftest``.

Every command reads an optional JSON config; each field can be overridden by a
flag of the same name. Results go to CSV files (15 significant digits) plus a
JSON summary in ``output_dir``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (
    absorbing_ball_diagnostic,
    convergence_rates,
    decay_fit,
    energy_trace,
    error_norms,
    estimate_lambda1,
    forcing_bound,
)
from .assembly import assemble_forms
from .linalg import SolverError
from .mesh import build_structured, refine_uniform
from .problems import get_problem
from .stepper import ModelConfig, TimeGrid, run

log = logging.getLogger("kvflow")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_SELFTEST = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    example: int = 1
    nu: float = 1.0
    kappa: float = 1.0
    levels: list[int] = field(default_factory=lambda: [4, 8, 16, 32])
    k: float | str = "h^2"  # explicit step or the rule "h^2"
    T: float = 1.0
    picard_tol: float = 1e-10
    picard_max: int = 50
    alpha: float | None = None
    forcing_scale: float = 1.0
    initial: str = "l2"
    output_dir: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.example not in (1, 2, 3):
            raise ConfigError(f"example must be 1, 2 or 3, got {self.example!r}")
        if not self.levels or any(int(n) != n or n < 1 for n in self.levels):
            raise ConfigError(f"levels must be positive integers, got {self.levels!r}")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ConfigError(f"levels must be strictly increasing, got {self.levels!r}")
        if isinstance(self.k, str):
            if self.k.replace(" ", "") not in ("h^2", "k=h^2"):
                raise ConfigError(f"unknown time-step rule {self.k!r}")
        elif not self.k > 0:
            raise ConfigError("time step must be positive")
        if self.T < 0:
            raise ConfigError("final time must be nonnegative")
        if self.initial not in ("l2", "interpolate"):
            raise ConfigError(f"initial must be 'l2' or 'interpolate', got {self.initial!r}")
        try:
            self.model()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def model(self) -> ModelConfig:
        return ModelConfig(nu=self.nu, kappa=self.kappa, picard_tol=self.picard_tol, picard_max=self.picard_max, alpha=self.alpha)

    def step_size(self, n: int) -> float:
        return 1.0 / n**2 if isinstance(self.k, str) else float(self.k)

    def grid(self, n: int) -> TimeGrid:
        try:
            return TimeGrid.from_final_time(self.T, self.step_size(n))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        data = dict(data)
        if "levels" in data:
            data["levels"] = [int(n) for n in data["levels"]]
        return cls(**data)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".15g")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _solve_level(cfg: RunConfig, n: int, problem, mesh=None):
    mesh = mesh or build_structured(n)
    forms = assemble_forms(mesh)
    grid = cfg.grid(n)
    forcing = None if problem.forcing_is_zero else problem.forcing
    traj = run(problem.initial_velocity, grid, cfg.model(), forms, forcing, initial_mode=cfg.initial)
    return forms, traj


def convergence_study(cfg: RunConfig) -> dict:
    """Errors and rates over ``cfg.levels``; returns rows plus a failure marker."""
    problem = get_problem(cfg.example, cfg.nu, cfg.kappa, cfg.forcing_scale)
    reference = None
    if not problem.has_exact:
        # reference: two uniform refinements beyond the finest level, step of the finest level
        n_max = cfg.levels[-1]
        ref_cfg = dataclasses.replace(cfg, k=cfg.step_size(n_max))
        mesh = refine_uniform(refine_uniform(build_structured(n_max)))
        ref_forms, ref_traj = _solve_level(ref_cfg, 4 * n_max, problem, mesh)
        reference = (ref_traj.final, ref_forms)
    reports, timings, failure = [], [], None
    for n in cfg.levels:
        t0 = time.perf_counter()
        try:
            forms, traj = _solve_level(cfg, n, problem)
        except SolverError as exc:
            failure = {"level": n, "error": str(exc)}
            break
        reports.append(error_norms(traj.final, forms, problem, reference=reference))
        timings.append(time.perf_counter() - t0)
        log.info("n=%d done in %.1fs: %s", n, time.perf_counter() - t0, reports[-1])
    columns = {
        "l2": [r.l2_velocity for r in reports],
        "h1": [r.h1_velocity for r in reports],
        "p": [r.l2_pressure_meanfree for r in reports],
    }
    hs = [r.h for r in reports]
    rates = {}
    for key, errs in columns.items():
        rr = convergence_rates(list(zip(hs, errs))) if len(errs) > 1 and min(errs) > 0 else [float("nan")] * max(len(errs) - 1, 0)
        rates[key] = [None] + rr if errs else []
    rows = [
        [hs[i], columns["l2"][i], rates["l2"][i], columns["h1"][i], rates["h1"][i], columns["p"][i], rates["p"][i]]
        for i in range(len(reports))
    ]
    return {"rows": rows, "reports": reports, "rates": rates, "timings": timings, "failure": failure}


CONVERGENCE_HEADER = ["h", "l2_err", "l2_rate", "h1_err", "h1_rate", "p_err", "p_rate"]


def cmd_convergence(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    study = convergence_study(cfg)
    _write_csv(out / "convergence.csv", CONVERGENCE_HEADER, study["rows"])
    summary = {
        "config": cfg.to_dict(),
        "levels": cfg.levels[: len(study["rows"])],
        "rates": {k: v[1:] for k, v in study["rates"].items()},
        "errors": [dataclasses.asdict(r) for r in study["reports"]],
        "partial": study["failure"] is not None,
        "failure": study["failure"],
    }
    _write_json(out / "convergence.json", summary)
    return EXIT_SOLVER if study["failure"] else EXIT_OK


def decay_study(cfg: RunConfig) -> dict:
    problem = get_problem(cfg.example, cfg.nu, cfg.kappa, cfg.forcing_scale)
    if not problem.forcing_is_zero:
        raise ConfigError("decay needs zero forcing: use example 2 or 3, or forcing_scale 0")
    n = cfg.levels[-1]
    forms, traj = _solve_level(cfg, n, problem)
    trace = energy_trace(traj, kappa=cfg.kappa)
    diffs = np.diff(trace.energy)
    monotone = bool(np.all(diffs <= 1e-12 * np.maximum(trace.energy[:-1], 1e-300)))
    try:
        slope, r2 = decay_fit(trace, 0.2, 1.0)
    except ValueError:
        slope, r2 = None, None
    return {"n": n, "trace": trace, "slope": slope, "r2": r2, "monotone": monotone}


def cmd_decay(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    try:
        res = decay_study(cfg)
    except SolverError as exc:
        _write_json(out / "decay.json", {"config": cfg.to_dict(), "failure": str(exc)})
        return EXIT_SOLVER
    tr = res["trace"]
    rows = [list(r) for r in zip(tr.t, tr.norm_u, tr.norm_grad_u, tr.energy)]
    _write_csv(out / "decay.csv", ["t", "norm_u", "norm_grad_u", "energy"], rows)
    _write_json(
        out / "decay.json",
        {"config": cfg.to_dict(), "n": res["n"], "fit_window": [0.2, 1.0], "slope": res["slope"], "r2": res["r2"],
         "energy_nonincreasing": res["monotone"]},
    )
    return EXIT_OK


def boundedness_study(cfg: RunConfig) -> dict:
    if cfg.example != 1:
        raise ConfigError("boundedness runs use example 1 (bounded forcing)")
    problem = get_problem(1, cfg.nu, cfg.kappa, cfg.forcing_scale)
    n = cfg.levels[-1]
    forms, traj = _solve_level(cfg, n, problem)
    model = cfg.model()
    lam1 = estimate_lambda1(forms)
    alpha = cfg.alpha if cfg.alpha is not None else 0.9 * model.alpha_bound(lam1)
    trace = energy_trace(traj, kappa=cfg.kappa)
    times = trace.t
    f_sup = 0.0 if problem.forcing_is_zero else forcing_bound(problem.forcing, forms, times)
    report = absorbing_ball_diagnostic(trace, model, f_sup, lam1, alpha=alpha)
    first_unit = trace.norm_u[trace.t <= 1.0 + 1e-12]
    return {
        "n": n,
        "trace": trace,
        "lambda1": lam1,
        "f_bound": f_sup,
        "report": report,
        "sup_norm": float(trace.norm_u.max()),
        "max_first_unit": float(first_unit.max()),
    }


def cmd_boundedness(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    try:
        res = boundedness_study(cfg)
    except SolverError as exc:
        _write_json(out / "boundedness.json", {"config": cfg.to_dict(), "failure": str(exc)})
        return EXIT_SOLVER
    tr = res["trace"]
    rows = [list(r) for r in zip(tr.t, tr.norm_u, tr.norm_grad_u, tr.energy)]
    _write_csv(out / "boundedness.csv", ["t", "norm_u", "norm_grad_u", "energy"], rows)
    payload = {
        "config": cfg.to_dict(),
        "n": res["n"],
        "lambda1": res["lambda1"],
        "f_bound": res["f_bound"],
        "sup_norm": res["sup_norm"],
        "max_norm_first_time_unit": res["max_first_unit"],
        "absorbing_ball": dataclasses.asdict(res["report"]),
    }
    _write_json(out / "boundedness.json", payload)
    return EXIT_OK


def cmd_selftest(cfg: RunConfig | None = None) -> int:
    from .oracles import run_selftest

    results = run_selftest()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_SELFTEST


def _levels(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from exc


def _step(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def _optional_float(text: str):
    return None if text.lower() in ("none", "null", "") else float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvflow", description="Kelvin-Voigt flow experiments with P2-P0 elements.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("convergence", "error and rate table over mesh levels"),
        ("decay", "energy trace of an unforced run"),
        ("boundedness", "long-time trace and absorbing-ball diagnostic"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path)
        p.add_argument("--example", type=int)
        p.add_argument("--nu", type=float)
        p.add_argument("--kappa", type=float)
        p.add_argument("--levels", type=_levels)
        p.add_argument("--k", type=_step, help="time step or the rule h^2")
        p.add_argument("--T", type=float)
        p.add_argument("--picard_tol", "--picard-tol", type=float)
        p.add_argument("--picard_max", "--picard-max", type=int)
        p.add_argument("--alpha", type=_optional_float)
        p.add_argument("--forcing_scale", "--forcing-scale", type=float)
        p.add_argument("--initial", choices=["l2", "interpolate"])
        p.add_argument("--output_dir", "--output-dir")
    sub.add_parser("selftest", help="oracle checks on tiny meshes")
    return parser


COMMAND_DEFAULTS = {
    "convergence": {},
    "decay": {"example": 2, "levels": [16]},
    "boundedness": {"example": 1, "levels": [8], "T": 10.0},
}


def load_config(args: argparse.Namespace) -> RunConfig:
    data = dict(COMMAND_DEFAULTS.get(args.command, {}))
    if getattr(args, "config", None):
        try:
            data.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    for f in dataclasses.fields(RunConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            data[f.name] = val
    if "alpha" in data and isinstance(data["alpha"], str):
        data["alpha"] = _optional_float(data["alpha"])
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "selftest":
        return cmd_selftest()
    try:
        cfg = load_config(args)
        handler = {"convergence": cmd_convergence, "decay": cmd_decay, "boundedness": cmd_boundedness}[args.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
