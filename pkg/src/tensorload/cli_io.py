"""Run configuration, pipeline orchestration and artifact emission.

A run is described by one JSON document. ``run_pipeline`` executes one mode
(``simulate``, ``estimate``, ``sensitivity``, ``oracle`` or ``synth``) and
writes its artifacts into the configured output directory only. If a stage
fails, everything the run wrote is removed and a :class:`PipelineError`
names the failing stage.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .density_fit import ClmDriftModel, TransientConfig, fit_density
from .estimate import (
    EstimationResult,
    argmax_params,
    brute_force_posterior,
    concentration_index,
    joint_marginal_2d,
    local_maxima,
    marginal,
    response_from_estimate,
    rmse_table,
    sensitivity_to_dict,
    sensitivity_indices,
    write_joint_csv,
    write_marginal_csv,
)
from .fokker_planck import StationarySolveConfig
from .grid import PARAMETER, STATE, DimSpec, GridRangeError, GridSpec, build_grid
from .load_model import (
    PARAM_NAMES,
    STATE_NAMES,
    REFERENCE_PARAMS,
    CompositeLoadParams,
    ModelDomainError,
    read_trace,
    write_trace,
)
from .synth import TraceShape, generate_synthetic

logger = logging.getLogger(__name__)

MODES = ("simulate", "estimate", "sensitivity", "oracle", "synth")

# Default deviation boxes of the state dimensions (states are measured from
# the equilibrium of each parameter node).
DEFAULT_DEVIATION_BOX = {
    "v_d_prime": (-0.012, 0.012),
    "v_q_prime": (-0.008, 0.008),
    "s": (-0.02, 0.02),
}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str, diagnostics: dict | None = None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class SolverSettings:
    sigma_rel: float = 1e-3
    smoothing: float = 0.3
    transient_tol: float = 1e-6
    stationary_tol: float = 1e-6
    eigen_tol: float = 1e-6
    residual_bound: float = 1e-6
    shift: float = 1e-2
    max_rank: int = 60
    stationary_max_rank: int = 80
    max_iters: int = 60
    cross_tol: float = 1e-9
    tau: float | None = None
    tau_offset: float = 1e-3
    steady_fraction: float = 0.1
    min_prominence: float = 0.0
    refine: bool = False


@dataclass(frozen=True)
class RunConfig:
    mode: str
    out: Path
    trace: Path | None = None
    synth: TraceShape | None = None
    params: CompositeLoadParams = REFERENCE_PARAMS
    grid: GridSpec | None = None
    joint_pairs: tuple[tuple[str, str], ...] = ()
    solver: SolverSettings = SolverSettings()
    seed: int = 0
    slip_sign: int = 1

    @property
    def grid_points(self) -> int:
        return math.prod(d.nodes for d in self.grid.dims) if self.grid else 0


@dataclass
class RunReport:
    mode: str
    wall_time: float
    diagnostics: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "wall_time": self.wall_time,
                "diagnostics": _plain(self.diagnostics),
                "artifacts": [str(a) for a in self.artifacts]}


# -- configuration ----------------------------------------------------------------


def _number(d: dict, key: str, where: str, default=None, *, integer=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}.{key}" if where else key, "missing required field")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}" if where else key, f"expected a number, got {v!r}")
    if integer:
        if int(v) != v:
            raise ConfigError(f"{where}.{key}" if where else key, f"expected an integer, got {v!r}")
        return int(v)
    if not math.isfinite(v):
        raise ConfigError(f"{where}.{key}" if where else key, "must be finite")
    return float(v)


def _parse_grid(entries, mode: str) -> GridSpec:
    if not isinstance(entries, list) or not entries:
        raise ConfigError("grid", "expected a nonempty list of dimension records")
    dims = []
    for k, e in enumerate(entries):
        if not isinstance(e, dict) or "label" not in e:
            raise ConfigError(f"grid[{k}]", "each entry needs a 'label'")
        lb = e["label"]
        unknown = set(e) - {"label", "lower", "upper", "nodes"}
        if unknown:
            raise ConfigError(f"grid.{lb}", f"unknown keys {sorted(unknown)}")
        if lb in STATE_NAMES:
            kind = STATE
            lo_def, hi_def = DEFAULT_DEVIATION_BOX[lb]
        elif lb in PARAM_NAMES:
            kind, lo_def, hi_def = PARAMETER, None, None
        else:
            raise ConfigError(f"grid.{lb}", f"unknown dimension label {lb!r}")
        lo = _number(e, "lower", f"grid.{lb}", lo_def)
        hi = _number(e, "upper", f"grid.{lb}", hi_def)
        n = _number(e, "nodes", f"grid.{lb}", integer=True)
        try:
            dims.append(DimSpec(lb, lo, hi, n, kind))
        except GridRangeError as exc:
            raise ConfigError(lb, str(exc)) from exc
    states = [d for d in dims if d.kind == STATE]
    params = [d for d in dims if d.kind == PARAMETER]
    states.sort(key=lambda d: STATE_NAMES.index(d.label))
    if mode == "estimate":
        if [d.label for d in states] != list(STATE_NAMES):
            raise ConfigError("grid", f"estimate mode needs all three states {STATE_NAMES}")
        if not params:
            raise ConfigError("grid", "estimate mode needs at least one parameter dimension")
    if mode in ("oracle", "sensitivity") and not params:
        raise ConfigError("grid", f"{mode} mode needs at least one parameter dimension")
    # States come first in their canonical order; parameters keep the config order.
    try:
        return GridSpec(tuple(states + params))
    except GridRangeError as exc:
        raise ConfigError("grid", str(exc)) from exc


def _parse_synth(d) -> TraceShape:
    if not isinstance(d, dict):
        raise ConfigError("synth", "expected an object")
    names = {f.name: f for f in dataclasses.fields(TraceShape)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigError("synth", f"unknown keys {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        if k == "kind":
            if v not in ("constant", "step", "ramp", "sag"):
                raise ConfigError("synth.kind", f"unknown trace kind {v!r}")
            kw[k] = v
        else:
            kw[k] = _number(d, k, "synth", integer=(k == "seed"))
    shape = TraceShape(**kw)
    if shape.dt <= 0 or shape.t_end <= 0:
        raise ConfigError("synth", "dt and t_end must be positive")
    return shape


def _parse_params(d) -> CompositeLoadParams:
    if not isinstance(d, dict):
        raise ConfigError("params", "expected an object")
    unknown = set(d) - set(PARAM_NAMES)
    if unknown:
        raise ConfigError(f"params.{sorted(unknown)[0]}", "unknown parameter label")
    values = REFERENCE_PARAMS.as_dict()
    for k in d:
        values[k] = _number(d, k, "params")
    try:
        return CompositeLoadParams(**values)
    except ModelDomainError as exc:
        bad = next((k for k in PARAM_NAMES if str(exc).startswith(k)), "params")
        raise ConfigError(f"params.{bad}", str(exc)) from exc


def _parse_solver(d) -> SolverSettings:
    if not isinstance(d, dict):
        raise ConfigError("solver", "expected an object")
    names = {f.name: f for f in dataclasses.fields(SolverSettings)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigError(f"solver.{sorted(unknown)[0]}", "unknown solver setting")
    kw = {}
    ints = {"max_rank", "stationary_max_rank", "max_iters"}
    for k, v in d.items():
        if k == "refine":
            if not isinstance(v, bool):
                raise ConfigError("solver.refine", "expected true or false")
            kw[k] = v
        elif k == "tau" and v is None:
            kw[k] = None
        else:
            kw[k] = _number(d, k, "solver", integer=k in ints)
            if kw[k] < 0 or (kw[k] == 0 and k not in ("min_prominence", "sigma_rel")):
                raise ConfigError(f"solver.{k}", "must be positive")
    return SolverSettings(**kw)


def parse_config(doc: dict, base_dir: Path | str = ".") -> RunConfig:
    """Validate a configuration document (already decoded from JSON)."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")
    allowed = {"mode", "out", "trace", "synth", "params", "grid", "joint_pairs", "solver",
               "seed", "slip_sign"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown configuration field")
    base = Path(base_dir)
    mode = doc.get("mode", "estimate")
    if mode not in MODES:
        raise ConfigError("mode", f"expected one of {MODES}, got {mode!r}")
    out = Path(doc.get("out", "out"))
    out = out if out.is_absolute() else base / out

    trace = None
    if doc.get("trace") is not None:
        trace = Path(doc["trace"])
        trace = trace if trace.is_absolute() else base / trace
        if mode != "synth" and not trace.is_file():
            raise ConfigError("trace", f"file not found: {trace}")
    synth = _parse_synth(doc["synth"]) if "synth" in doc else None
    if mode == "synth" and synth is None:
        synth = TraceShape()
    if mode not in ("synth",) and trace is None and synth is None:
        raise ConfigError("trace", "give a trace CSV or a 'synth' block")

    params = _parse_params(doc.get("params", {}))
    grid = None
    if "grid" in doc:
        grid = _parse_grid(doc["grid"], mode)
    elif mode in ("estimate", "sensitivity", "oracle"):
        raise ConfigError("grid", f"{mode} mode needs a grid")

    pairs = []
    for k, pr in enumerate(doc.get("joint_pairs", [])):
        if (not isinstance(pr, (list, tuple)) or len(pr) != 2 or pr[0] == pr[1]):
            raise ConfigError(f"joint_pairs[{k}]", "expected two different labels")
        for lb in pr:
            if grid is None or lb not in grid.labels:
                raise ConfigError(f"joint_pairs[{k}]", f"{lb!r} is not a grid dimension")
        pairs.append((pr[0], pr[1]))

    seed = _number(doc, "seed", "", 0, integer=True)
    slip = _number(doc, "slip_sign", "", 1, integer=True)
    if slip not in (1, -1):
        raise ConfigError("slip_sign", "must be 1 or -1")
    solver = _parse_solver(doc.get("solver", {}))
    return RunConfig(mode=mode, out=out, trace=trace, synth=synth, params=params, grid=grid,
                     joint_pairs=tuple(pairs), solver=solver, seed=seed, slip_sign=slip)


def load_config(path) -> RunConfig:
    """Read and validate a JSON run configuration.

    Relative paths inside the document resolve against its directory.
    """
    path = Path(path)
    return parse_config(_read_json(path), path.parent)


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path} is not valid JSON: {exc}") from exc


# -- artifact writing -------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dumps_json(obj) -> str:
    """Deterministic JSON: sorted keys and shortest round-trip floats."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


class _Artifacts:
    """Tracks files written by one run so a failure can remove them."""

    def __init__(self, out: Path):
        self.out = out.resolve()
        self.created_dir = not self.out.exists()
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = (self.out / name).resolve()
        if self.out not in p.parents:
            raise PipelineError("output", f"refusing to write outside {self.out}: {name}")
        self.out.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def text(self, name: str, content: str) -> Path:
        p = self.path(name)
        p.write_text(content)
        return p

    def cleanup(self) -> None:
        for p in self.files:
            if p.exists():
                p.unlink()
        if self.created_dir and self.out.exists() and not any(self.out.iterdir()):
            self.out.rmdir()


def _gnuplot_marginal(m) -> str:
    lines = [f"# {m.label} density"]
    lines += [f"{float(x)!r} {float(v)!r}" for x, v in zip(m.nodes, m.values)]
    return "\n".join(lines) + "\n"


def _gnuplot_joint(table, nodes_a, nodes_b, a, b) -> str:
    lines = [f"# {a} {b} density"]
    for i, xa in enumerate(nodes_a):
        lines += [f"{float(xa)!r} {float(xb)!r} {float(table[i, j])!r}"
                  for j, xb in enumerate(nodes_b)]
        lines.append("")
    return "\n".join(lines) + "\n"


def _response_csv(trace, P_hat, Q_hat) -> str:
    lines = ["t,P_measured,Q_measured,P_predicted,Q_predicted"]
    for m, p, q in zip(trace, P_hat, Q_hat):
        lines.append(",".join(repr(float(v)) for v in (m.t, m.P, m.Q, p, q)))
    return "\n".join(lines) + "\n"


# -- stages -----------------------------------------------------------------------


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        logger.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError):
            diag = {"error_type": exc_type.__name__}
            if hasattr(exc, "residual"):
                diag["residual"] = exc.residual
            raise PipelineError(self.name, str(exc), diag) from exc
        return False


def _load_trace(cfg: RunConfig):
    if cfg.trace is not None:
        return read_trace(cfg.trace)
    return generate_synthetic(cfg.synth, cfg.params, slip_sign=cfg.slip_sign)


def _param_domain(cfg: RunConfig):
    return build_grid(GridSpec(tuple(d for d in cfg.grid.dims if d.kind == PARAMETER)))


def _run_simulate(cfg, trace, art, diag):
    with _Stage("simulate"):
        P_hat, Q_hat, r_p, r_q = response_from_estimate(cfg.params, trace,
                                                        slip_sign=cfg.slip_sign)
    with _Stage("write"):
        art.text("predicted_response.csv", _response_csv(trace, P_hat, Q_hat))
        art.text("predicted_response.dat", "# t P_meas Q_meas P_pred Q_pred\n" + "\n".join(
            " ".join(repr(float(v)) for v in (m.t, m.P, m.Q, p, q))
            for m, p, q in zip(trace, P_hat, Q_hat)) + "\n")
        art.text("simulation.json", dumps_json({"rmse_P": r_p, "rmse_Q": r_q,
                                                "params": cfg.params.as_dict()}))
    diag.update(rmse_P=r_p, rmse_Q=r_q)


def _run_synth(cfg, art, diag):
    with _Stage("synthesize"):
        trace = generate_synthetic(cfg.synth, cfg.params, slip_sign=cfg.slip_sign)
    with _Stage("write"):
        write_trace(art.path("trace.csv"), trace)
    diag.update(samples=len(trace))


def estimate_from_config(cfg: RunConfig, trace):
    """Fokker-Planck estimate for a validated configuration (no file output)."""
    s = cfg.solver
    with _Stage("initialize"):
        domain = build_grid(cfg.grid)
        model = ClmDriftModel(domain, cfg.params, trace[0], slip_sign=cfg.slip_sign)
        if not np.any(model.feasible):
            raise ValueError("no parameter node admits an equilibrium for the first sample")
    tcfg = TransientConfig(sigma_rel=s.sigma_rel, smoothing=s.smoothing,
                           solver_tol=s.transient_tol, max_rank=s.max_rank,
                           cross_tol=s.cross_tol, tau_offset=s.tau_offset, tau=s.tau,
                           steady_fraction=s.steady_fraction, seed=cfg.seed)
    scfg = StationarySolveConfig(shift=s.shift, tol=s.eigen_tol, solver_tol=s.stationary_tol,
                                 residual_bound=s.residual_bound,
                                 max_rank=s.stationary_max_rank, max_iters=s.max_iters,
                                 seed=cfg.seed)
    with _Stage("solve"):
        fit = fit_density(model, trace, tcfg, scfg)
    with _Stage("extract"):
        margs = {lb: marginal(fit.density, domain, lb) for lb in domain.spec.labels}
        plabels = domain.spec.param_labels
        pmarg = {lb: margs[lb] for lb in plabels}
        best = argmax_params(pmarg, refine=s.refine)
        optima = {lb: local_maxima(pmarg[lb], s.min_prominence) for lb in plabels}
        w = fit.weights
        jidx = np.unravel_index(int(np.argmax(w)), w.shape)
        joint = {lb: float(domain.nodes[domain.dim(lb)][i]) for lb, i in zip(plabels, jidx)}
        pstar = cfg.params.with_values(**best)
    with _Stage("evaluate"):
        _, _, r_p, r_q = response_from_estimate(pstar, trace, slip_sign=cfg.slip_sign)
    d = fit.diagnostics
    diagnostics = {
        "grid_points": cfg.grid_points, "grid_shape": list(domain.shape),
        "sigma": list(fit.sigma), "tau": d.tau, "min_grid_rmse": d.min_rmse,
        "max_rank": d.max_rank, "transient_steps": d.steps,
        "eigenvalue": d.eigenvalue, "eigen_residual": d.eigen_residual,
        "eigen_iterations": d.eigen_iterations, "seed": cfg.seed,
    }
    result = EstimationResult(params=pstar, estimated=tuple(plabels), local_optima=optima,
                              marginals=margs, rmse_P=r_p, rmse_Q=r_q, joint_argmax=joint,
                              diagnostics=diagnostics)
    return result, fit, domain


def _run_estimate(cfg, trace, art, diag):
    result, fit, domain = estimate_from_config(cfg, trace)
    with _Stage("evaluate"):
        pstar = result.params
        P_hat, Q_hat, _, _ = response_from_estimate(pstar, trace, slip_sign=cfg.slip_sign)
    with _Stage("write"):
        for lb, m in result.marginals.items():
            write_marginal_csv(art.path(f"marginal_{lb}.csv"), m)
            art.text(f"marginal_{lb}.dat", _gnuplot_marginal(m))
        for a, b in cfg.joint_pairs:
            table = joint_marginal_2d(fit.density, domain, a, b)
            na, nb = domain.nodes[domain.dim(a)], domain.nodes[domain.dim(b)]
            write_joint_csv(art.path(f"joint_{a}_{b}.csv"), table, na, nb)
            art.text(f"joint_{a}_{b}.dat", _gnuplot_joint(table, na, nb, a, b))
        art.text("estimation_result.json", result.to_json())
        art.text("predicted_response.csv", _response_csv(trace, P_hat, Q_hat))
    diag.update(result.diagnostics)
    diag["estimate"] = {lb: float(getattr(pstar, lb)) for lb in result.estimated}


def _run_oracle(cfg, trace, art, diag):
    s = cfg.solver
    with _Stage("enumerate"):
        pdom = _param_domain(cfg)
        post = brute_force_posterior(pdom, trace, cfg.params, tau=s.tau, tau_offset=s.tau_offset,
                                     slip_sign=cfg.slip_sign)
        margs = {lb: post.marginal(lb) for lb in post.labels}
    with _Stage("write"):
        mesh = np.meshgrid(*post.nodes, indexing="ij")
        lines = [",".join(post.labels + ("rmse", "density"))]
        for idx in np.ndindex(post.density.shape):
            row = [float(m[idx]) for m in mesh] + [float(post.rmse[idx]), float(post.density[idx])]
            lines.append(",".join(repr(v) for v in row))
        art.text("posterior.csv", "\n".join(lines) + "\n")
        for lb, m in margs.items():
            write_marginal_csv(art.path(f"oracle_marginal_{lb}.csv"), m)
        mode = post.mode()
        art.text("oracle_result.json", dumps_json({
            "joint_mode": mode,
            "marginal_modes": argmax_params(margs),
            "tau": post.tau,
            "min_rmse": float(np.nanmin(post.rmse)),
        }))
    diag.update(joint_mode=mode, tau=post.tau)


def _run_sensitivity(cfg, trace, art, diag):
    s = cfg.solver
    with _Stage("enumerate"):
        pdom = _param_domain(cfg)
        table = rmse_table(pdom, trace, cfg.params, slip_sign=cfg.slip_sign)
        post = brute_force_posterior(pdom, trace, cfg.params, tau=s.tau, tau_offset=s.tau_offset,
                                     slip_sign=cfg.slip_sign)
    with _Stage("indices"):
        margs = {lb: post.marginal(lb) for lb in post.labels}
        idx = sensitivity_indices(margs, (table, pdom.spec.labels))
        if len(cfg.grid.state_labels) == len(STATE_NAMES):
            result, _, _ = estimate_from_config(cfg, trace)
            conc = {lb: concentration_index(result.marginals[lb]) for lb in post.labels}
            idx = {lb: dataclasses.replace(v, concentration=conc[lb]) for lb, v in idx.items()}
            diag["concentration_source"] = "fokker_planck"
        else:
            diag["concentration_source"] = "enumeration"
    with _Stage("write"):
        art.text("sensitivity.json", dumps_json(sensitivity_to_dict(idx)))
    diag["indices"] = sensitivity_to_dict(idx)


def run_pipeline(cfg: RunConfig) -> RunReport:
    """Execute one configured run; on failure remove every artifact it wrote."""
    t0 = time.perf_counter()
    art = _Artifacts(cfg.out)
    diag: dict[str, Any] = {}
    try:
        if cfg.mode == "synth":
            _run_synth(cfg, art, diag)
        else:
            with _Stage("load"):
                trace = _load_trace(cfg)
                if len(trace) < 2:
                    raise ValueError("trace needs at least two samples")
            runner = {"simulate": _run_simulate, "estimate": _run_estimate,
                      "oracle": _run_oracle, "sensitivity": _run_sensitivity}[cfg.mode]
            runner(cfg, trace, art, diag)
    except BaseException:
        art.cleanup()
        raise
    return RunReport(cfg.mode, time.perf_counter() - t0, diag, list(art.files))


# -- command line -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tensorload",
        description="Composite load parameter estimation with tensor-train densities.")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run the {mode} mode")
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--verbose", "-v", action="count", default=0,
                       help="log progress (-vv for solver detail)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(message)s",
                        stream=sys.stderr)
    try:
        path = Path(args.config)
        doc = _read_json(path)
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "expected a JSON object")
        doc["mode"] = args.mode
        if args.out is not None:
            doc["out"] = os.path.abspath(args.out)
        if args.seed is not None:
            doc["seed"] = args.seed
        cfg = parse_config(doc, path.parent)
    except ConfigError as exc:
        print(f"tensorload: [config] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_pipeline(cfg)
    except PipelineError as exc:
        print(f"tensorload: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(f"tensorload: [{exc.stage}] diagnostics {dumps_json(exc.diagnostics).strip()}",
                  file=sys.stderr)
        return EXIT_STAGE
    print(dumps_json(report.to_dict()), end="")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
