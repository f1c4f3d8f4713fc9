"""Experiment configuration, execution and CSV output.

A configuration describes one model, one or more sampling methods, the burn-in
and collection lengths and the number of repetitions. Every repetition of
every method runs on its own random stream derived from the master seed, the
repetition index and the method name. Results therefore do not depend on
worker count or method order.

Output files (all CSV with a ``#``-prefixed JSON header line):

* ``draws_<method>_rep<r>.csv``: collected draws, one row per iteration.
* ``tuning_<method>_rep<r>.csv``: step size and windowed acceptance rate.
* ``acf_<method>_rep<r>.csv``: autocorrelations of selected coordinates.
* ``summary.csv``: per-repetition ESS and acceptance. Deterministic.
* ``timing.csv``: wall-clock time, min ESS per second and thinning factor.
* ``table.csv``: medians over repetitions in the comparison-table layout.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import __version__
from .chains import METHODS, Chain, NonFiniteChainError, run_chain
from .core import RngStream, TargetModel
from .diagnostics import DegenerateSeriesError, acf, summarize_chain
from .models import (
    COX_TRUE,
    BlockSpec,
    CoxFamily,
    CoxModel,
    GibbsSchedule,
    SvFamily,
    SvModel,
    ar1_correlation,
    ar1_covariance_matrix,
    cox_latent_target,
    gibbs_run,
    mvn_target,
    read_series,
    simulate_cox_data,
    simulate_sv_data,
    sv_latent_target,
    sv_to_working,
    write_series,
)
from .params import a_to_step
from .precondition import cholesky_factor
from .tuning import TuningPolicy, tune_chain

__all__ = [
    "ExperimentConfig",
    "load_config",
    "config_hash",
    "run_experiment",
    "tune_only",
    "diagnose_file",
    "read_csv",
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SvSpec(_Strict):
    T: int = Field(200, ge=2)
    beta: float = Field(0.65, gt=0)
    sigma: float = Field(0.15, gt=0)
    phi: float = Field(0.98, gt=-1, lt=1)


class CoxSpec(_Strict):
    m: int = Field(8, ge=2, le=32)
    sigma2: float = Field(COX_TRUE["sigma2"], gt=0)
    beta: float = Field(COX_TRUE["beta"], gt=0)
    mu: Optional[float] = None

    def mean_level(self) -> float:
        return math.log(126.0) - 0.5 * self.sigma2 if self.mu is None else self.mu


ModelName = Literal["std_normal", "mvn", "sv_latent", "sv_posterior", "cox_latent", "cox_posterior"]


class ModelSpec(_Strict):
    name: ModelName
    dim: int = Field(2, ge=1)
    rho: float = Field(0.9, gt=-1, lt=1)
    data_seed: int = Field(0, ge=0)
    data_file: Optional[str] = None
    sv: SvSpec = SvSpec()
    cox: CoxSpec = CoxSpec()

    @property
    def gibbs(self) -> bool:
        return self.name.endswith("_posterior")


class SamplerSpec(_Strict):
    """Either ``epsilon`` (plus optional ``c``) or ``(a, b)``."""

    method: str = "HAMS-A"
    epsilon: Optional[float] = Field(None, gt=0, le=1)
    c: Optional[float] = Field(None, ge=0, le=1)
    a: Optional[float] = Field(None, gt=0, lt=2)
    b: Optional[float] = Field(None, ge=0)
    nleap: Optional[int] = Field(None, ge=1)
    general: Optional[List[float]] = None

    @field_validator("method")
    @classmethod
    def _known(cls, v):
        if v not in METHODS:
            raise ValueError(f"unknown method {v!r}; choose from {', '.join(METHODS)}")
        return v

    @model_validator(mode="after")
    def _one_form(self):
        if (self.a is None) != (self.b is None):
            raise ValueError("give both a and b, or neither")
        if self.a is not None and (self.epsilon is not None or self.c is not None):
            raise ValueError("use either (epsilon, c) or (a, b), not both")
        if self.general is not None and len(self.general) != 4:
            raise ValueError("general needs [a1, a2, a3, phi]")
        return self

    def step_and_carryover(self, default_eps: float) -> tuple[float, Optional[float]]:
        if self.a is not None:
            return a_to_step(self.a), self.b / (2.0 - self.a)
        return (self.epsilon if self.epsilon is not None else default_eps), self.c

    def with_method(self, method: str) -> "SamplerSpec":
        return self.model_copy(update={"method": method})


class TuningSpec(_Strict):
    enabled: bool = True
    target_rate: Optional[float] = Field(None, gt=0, lt=1)
    band_halfwidth: float = Field(0.05, ge=0)
    delta: float = Field(0.2, gt=0, lt=1)
    window: int = Field(250, ge=1)

    def policy(self, method: str) -> TuningPolicy:
        extra = {} if self.target_rate is None else {"target_rate": self.target_rate}
        return TuningPolicy.for_method(
            method, band_halfwidth=self.band_halfwidth, delta=self.delta, window=self.window, **extra
        )


class GibbsStages(_Strict):
    tune: int = Field(1000, ge=0)
    crude: int = Field(1000, ge=1)
    precond_tune: int = Field(1000, ge=0)


class OutputSpec(_Strict):
    acf_coordinates: List[int] = [0]
    acf_max_lag: int = Field(100, ge=1)
    ess_K: int = Field(3000, ge=1)


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    out: str = "results"
    burn_in: int = Field(5000, ge=0)
    n_collect: int = Field(5000, ge=10)
    repetitions: int = Field(1, ge=1)
    preconditioning: bool = False
    methods: Optional[List[str]] = None
    model: ModelSpec
    sampler: SamplerSpec = SamplerSpec()
    param_sampler: SamplerSpec = SamplerSpec(epsilon=0.05)
    tuning: TuningSpec = TuningSpec()
    gibbs: GibbsStages = GibbsStages()
    output: OutputSpec = OutputSpec()

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, v):
        if v is None:
            return v
        bad = [m for m in v if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
        if len(set(v)) != len(v):
            raise ValueError("methods must be distinct")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        if self.tuning.enabled and not self.model.gibbs and 0 < self.burn_in < self.tuning.window:
            raise ValueError("burn_in must cover at least one tuning window")
        if self.param_sampler.method == "pCNL":
            raise ValueError("pCNL is only available for latent blocks")
        return self

    def method_list(self) -> List[str]:
        return list(self.methods) if self.methods else [self.sampler.method]


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse a TOML file and validate it. ``overrides`` replace top-level keys."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.model_validate(raw)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form, excluding the output directory."""
    payload = cfg.model_dump(mode="json", exclude={"out"})
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- data & targets


@dataclass
class Problem:
    """A built experiment problem: target or Gibbs family plus starting point."""

    dim: int
    x0: np.ndarray
    target: Optional[TargetModel] = None
    family: object = None
    theta0: Optional[np.ndarray] = None
    prior_cov: Optional[np.ndarray] = None
    column_names: List[str] = field(default_factory=list)


def _observations(spec: ModelSpec, simulate) -> tuple[np.ndarray, np.ndarray]:
    x, y = simulate(RngStream(spec.data_seed, stream_id=1))
    if spec.data_file is not None:
        y, _ = read_series(spec.data_file)
    return x, y


def build_problem(spec: ModelSpec) -> Problem:
    name = spec.name
    if name in ("std_normal", "mvn"):
        k = spec.dim
        cov = np.eye(k) if name == "std_normal" else ar1_correlation(k, spec.rho)
        target = TargetModel.standard_normal(k) if name == "std_normal" else mvn_target(cov)
        return Problem(k, np.zeros(k), target, prior_cov=cov, column_names=[f"x{i}" for i in range(k)])
    if name.startswith("sv"):
        s = spec.sv
        x, y = _observations(spec, lambda r: simulate_sv_data(s.T, s.beta, s.sigma, s.phi, r))
        model = SvModel(y, s.beta, s.sigma, s.phi)
        names = [f"x{i}" for i in range(model.T)]
        if name == "sv_latent":
            cov = ar1_covariance_matrix(model.T, s.sigma, s.phi)
            return Problem(model.T, x.copy(), sv_latent_target(model), prior_cov=cov, column_names=names)
        return Problem(
            model.T, x.copy(), family=SvFamily(y), theta0=sv_to_working(s.beta, s.sigma, s.phi),
            column_names=names + ["beta", "alpha", "gamma"],
        )
    c = spec.cox
    mu = c.mean_level()
    x, y = _observations(spec, lambda r: simulate_cox_data(c.m, c.sigma2, c.beta, mu, r))
    model = CoxModel(c.m, y, c.sigma2, c.beta, mu)
    names = [f"x{i}" for i in range(model.n)]
    if name == "cox_latent":
        return Problem(model.n, x.copy(), cox_latent_target(model), prior_cov=model.covariance(),
                       column_names=names)
    return Problem(
        model.n, x.copy(), family=CoxFamily(model), theta0=np.log([c.sigma2, c.beta]),
        column_names=names + ["log_sigma2", "log_beta"],
    )


def write_data_file(cfg: ExperimentConfig, out: Path) -> Optional[Path]:
    """Record the observations used, so a run can be replayed from disk."""
    spec = cfg.model
    if spec.name.startswith("sv"):
        s = spec.sv
        _, y = _observations(spec, lambda r: simulate_sv_data(s.T, s.beta, s.sigma, s.phi, r))
    elif spec.name.startswith("cox"):
        c = spec.cox
        _, y = _observations(spec, lambda r: simulate_cox_data(c.m, c.sigma2, c.beta, c.mean_level(), r))
    else:
        return None
    return write_series(out / "data_y.txt", y, spec.data_seed)


# ---------------------------------------------------------------- running


def method_stream(seed: int, repetition: int, method: str) -> RngStream:
    """Stream for one (repetition, method) pair; independent of method order."""
    return RngStream(seed, stream_id=repetition).substream(zlib.crc32(method.encode()) % (1 << 20))


def _default_c(method: str, block: str) -> Optional[float]:
    if method in ("HAMS-A", "HAMS-B", "UDL", "GMC"):
        return 0.76 if block == "latent" else 0.1
    return None


def _default_nleap(block: str) -> int:
    return 50 if block == "latent" else 6


@dataclass
class RunResult:
    method: str
    repetition: int
    draws: np.ndarray
    accepted_count: int
    iterations: int
    time_s: float
    epsilon: float
    carryover: Optional[float]
    tuning_trace: List[dict]
    stage_boundaries: List[int] = field(default_factory=list)


class ChainAborted(RuntimeError):
    def __init__(self, method: str, repetition: int, iteration: int):
        super().__init__(
            f"{method} repetition {repetition}: non-finite value at iteration {iteration}"
        )
        self.iteration = iteration


def _single_chain(cfg: ExperimentConfig, method: str, rep: int, problem: Problem) -> RunResult:
    spec = cfg.sampler.with_method(method)
    eps, c = spec.step_and_carryover(0.5)
    if c is None and not cfg.preconditioning:
        c = _default_c(method, "latent")
    P = cholesky_factor(problem.target.expected_hessian_hint) if cfg.preconditioning else None
    rng = method_stream(cfg.seed, rep, method)
    chain = Chain(
        method,
        problem.target,
        eps,
        problem.x0,
        rng.normal(problem.dim),
        c=None if cfg.preconditioning else c,
        nleap=spec.nleap or _default_nleap("latent"),
        preconditioner=P,
        prior_cov=problem.prior_cov if method == "pCNL" else None,
        general=spec.general or ([0.5, 0.0, 0.5, 0.0] if method == "HAMS-general" else None),
    )
    trace: List[dict] = []
    if cfg.burn_in:
        if cfg.tuning.enabled and method != "HAMS-general":
            _, records = tune_chain(chain, cfg.tuning.policy(method), cfg.burn_in, rng)
            trace = [r._asdict() for r in records]
        else:
            for _ in range(cfg.burn_in):
                chain.step(rng)
    try:
        rec = run_chain(chain, cfg.n_collect, rng)
    except NonFiniteChainError as err:
        raise ChainAborted(method, rep, cfg.burn_in + err.iteration) from None
    return RunResult(
        method, rep, rec.draws, int(np.count_nonzero(rec.accepted)), rec.accepted.size,
        rec.total_time, chain.epsilon, chain.carryover, trace,
    )


def _gibbs_chain(cfg: ExperimentConfig, method: str, rep: int, problem: Problem) -> RunResult:
    lat = cfg.sampler.with_method(method)
    eps, c = lat.step_and_carryover(0.5)
    peps, pc = cfg.param_sampler.step_and_carryover(0.05)
    latent_spec = BlockSpec(method, eps, c if c is not None else _default_c(method, "latent"),
                            lat.nleap or _default_nleap("latent"))
    pm = cfg.param_sampler.method
    param_spec = BlockSpec(pm, peps, pc if pc is not None else _default_c(pm, "param"),
                           cfg.param_sampler.nleap or _default_nleap("param"))
    g = cfg.gibbs
    schedule = GibbsSchedule(g.tune, g.crude, g.precond_tune, cfg.n_collect)
    rng = method_stream(cfg.seed, rep, method)
    try:
        rec = gibbs_run(latent_spec, param_spec, problem.family, schedule, rng,
                        problem.x0, problem.theta0, cfg.tuning.policy(method),
                        cfg.tuning.policy(pm))
    except FloatingPointError as err:
        it = int(str(err).rsplit(" ", 1)[-1])
        raise ChainAborted(method, rep, it) from None
    sl = rec.stage_slice("collect")
    draws = np.hstack([rec.latent[sl], rec.params[sl]])
    trace = [{k: v for k, v in t.items()} for t in rec.epsilon_trace]
    return RunResult(
        method, rep, draws, int(np.count_nonzero(rec.latent_accepted[sl])), draws.shape[0],
        rec.stage_times[-1], float("nan"), None, trace, rec.stage_boundaries,
    )


def run_one(cfg: ExperimentConfig, method: str, rep: int) -> RunResult:
    problem = build_problem(cfg.model)
    if cfg.model.gibbs:
        return _gibbs_chain(cfg, method, rep, problem)
    return _single_chain(cfg, method, rep, problem)


def _run_job(args):
    cfg_json, method, rep = args
    return run_one(ExperimentConfig.model_validate_json(cfg_json), method, rep)


# ---------------------------------------------------------------- output


def _header(cfg: ExperimentConfig, **extra) -> str:
    meta = {"config_hash": config_hash(cfg), "seed": cfg.seed, "version": __version__, **extra}
    return "# " + json.dumps(meta, sort_keys=True) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path: Path, header: str, columns: List[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        fh.write(header)
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def write_matrix(path: Path, header: str, columns: List[str], data: np.ndarray) -> Path:
    with open(path, "w") as fh:
        fh.write(header)
        fh.write(",".join(columns) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")
    return path


def read_csv(path) -> tuple[dict, List[str], np.ndarray]:
    """Read a file written here: returns ``(header_meta, columns, data)``.

    ``data`` is a float array when every column is numeric. Otherwise it is
    an object array whose numeric columns hold floats and text columns hold
    strings.
    """
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing metadata header")
        meta = json.loads(first[1:])
        rows = list(csv.reader(fh))
    columns, body = rows[0], rows[1:]
    cells = np.array(body, dtype=object).reshape(len(body), len(columns))
    numeric = True
    for j in range(len(columns)):
        try:
            cells[:, j] = [float(v) if v != "" else float("nan") for v in cells[:, j]]
        except ValueError:
            numeric = False
    return meta, columns, cells.astype(np.float64) if numeric else cells


def _summary_row(res: RunResult, K: int):
    try:
        rep = summarize_chain(res.draws, res.time_s, K)
        ess = (rep.min, rep.median, rep.max)
    except DegenerateSeriesError:
        ess = (0.0, 0.0, 0.0)
    return ess


def write_outputs(cfg: ExperimentConfig, results: List[RunResult], out: Path,
                  column_names: List[str]) -> Dict[str, Path]:
    out.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {}
    K = cfg.output.ess_K
    summary_rows, timing_rows = [], []
    ess_by_method: Dict[str, List[tuple]] = {}
    for res in results:
        tag = f"{res.method}_rep{res.repetition}"
        head = _header(cfg, method=res.method, repetition=res.repetition)
        written[f"draws_{tag}"] = write_matrix(out / f"draws_{tag}.csv", head, column_names, res.draws)
        if res.tuning_trace:
            cols = list(res.tuning_trace[0].keys())
            written[f"tuning_{tag}"] = write_csv(
                out / f"tuning_{tag}.csv", head, cols, [[t[c] for c in cols] for t in res.tuning_trace]
            )
        lags = min(cfg.output.acf_max_lag, res.draws.shape[0] - 2)
        coords = [j for j in cfg.output.acf_coordinates if j < res.draws.shape[1]]
        acf_cols, acf_data = [np.arange(1, lags + 1, dtype=float)], []
        for j in coords:
            try:
                acf_data.append(acf(res.draws[:, j], lags))
            except DegenerateSeriesError:
                acf_data.append(np.full(lags, np.nan))
        if coords:
            written[f"acf_{tag}"] = write_matrix(
                out / f"acf_{tag}.csv", head, ["lag"] + [column_names[j] for j in coords],
                np.column_stack(acf_cols + acf_data),
            )
        ess = _summary_row(res, K)
        rate = res.accepted_count / res.iterations
        summary_rows.append([res.method, res.repetition, res.iterations, *ess, rate, res.epsilon,
                             res.carryover])
        timing_rows.append([res.method, res.repetition, res.time_s,
                            ess[0] / res.time_s if res.time_s > 0 else float("inf")])
        ess_by_method.setdefault(res.method, []).append((res.time_s, *ess, rate))

    head = _header(cfg)
    written["summary"] = write_csv(
        out / "summary.csv", head,
        ["method", "repetition", "n", "ess_min", "ess_median", "ess_max", "acceptance_rate",
         "epsilon", "carryover"],
        summary_rows,
    )
    med_time = {m: float(np.median([r[0] for r in v])) for m, v in ess_by_method.items()}
    fastest = min(med_time.values())
    written["timing"] = write_csv(
        out / "timing.csv", head,
        ["method", "repetition", "time_s", "min_ess_per_time", "thinning"],
        [row + [med_time[row[0]] / fastest if fastest > 0 else 1.0] for row in timing_rows],
    )
    table = []
    for m, v in ess_by_method.items():
        arr = np.array(v)
        med = np.median(arr, axis=0)
        table.append([m, med[0], med[1], med[2], med[3],
                      med[1] / med[0] if med[0] > 0 else float("inf"), med[4],
                      med[0] / fastest if fastest > 0 else 1.0])
    written["table"] = write_csv(
        out / "table.csv", head,
        ["method", "time_s", "ess_min", "ess_median", "ess_max", "min_ess_per_time",
         "acceptance_rate", "thinning"],
        table,
    )
    return written


def run_experiment(cfg: ExperimentConfig, out=None, threads: int = 1) -> Dict[str, Path]:
    """Run every (method, repetition) pair and write all output files."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(m, r) for m in cfg.method_list() for r in range(cfg.repetitions)]
    if threads > 1 and len(jobs) > 1:
        payload = cfg.model_dump_json()
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_job, [(payload, m, r) for m, r in jobs]))
    else:
        results = [run_one(cfg, m, r) for m, r in jobs]
    problem = build_problem(cfg.model)
    written = write_outputs(cfg, results, out, problem.column_names)
    data = write_data_file(cfg, out)
    if data is not None:
        written["data"] = data
    return written


def tune_only(cfg: ExperimentConfig, out=None) -> Dict[str, Path]:
    """Burn-in tuning for each method; writes traces and the frozen step sizes."""
    if cfg.model.gibbs:
        raise ValueError("tune runs single-block models; use bench for Gibbs models")
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    short = cfg.model_copy(update={"n_collect": 10})
    written: Dict[str, Path] = {}
    rows = []
    for m in cfg.method_list():
        for r in range(cfg.repetitions):
            res = _single_chain(short, m, r, build_problem(cfg.model))
            head = _header(cfg, method=m, repetition=r)
            if res.tuning_trace:
                cols = list(res.tuning_trace[0].keys())
                written[f"tuning_{m}_rep{r}"] = write_csv(
                    out / f"tuning_{m}_rep{r}.csv", head, cols,
                    [[t[c] for c in cols] for t in res.tuning_trace],
                )
            last = res.tuning_trace[-1]["rate"] if res.tuning_trace else float("nan")
            rows.append([m, r, res.epsilon, res.carryover, last])
    written["tuned"] = write_csv(out / "tuned.csv", _header(cfg),
                                 ["method", "repetition", "epsilon", "carryover", "last_window_rate"],
                                 rows)
    return written


def diagnose_file(path, K: int = 3000, max_lag: int = 100, out=None) -> Dict[str, Path]:
    """ESS and ACF of every column of a draw file."""
    meta, columns, data = read_csv(path)
    out = Path(out) if out else Path(path).parent
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(path).stem
    head = "# " + json.dumps({**meta, "source": Path(path).name}, sort_keys=True) + "\n"
    rep = summarize_chain(data, 0.0, K)
    rows = [[c, rep.per_coordinate_ess[j]] for j, c in enumerate(columns)]
    written = {"ess": write_csv(out / f"ess_{stem}.csv", head, ["column", "ess"], rows)}
    lags = min(max_lag, data.shape[0] - 2)
    series = [np.arange(1, lags + 1, dtype=float)]
    for j in range(data.shape[1]):
        try:
            series.append(acf(data[:, j], lags))
        except DegenerateSeriesError:
            series.append(np.full(lags, np.nan))
    written["acf"] = write_matrix(out / f"acf_{stem}.csv", head, ["lag"] + columns, np.column_stack(series))
    return written
