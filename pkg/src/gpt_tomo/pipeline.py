"""End-to-end analysis: counts in, rank selection, GPT geometry, bounds and report out."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from . import io
from .bounds import BoundsReport, analyze_bounds
from .core import (FrequencyMatrix, GptError, GptModel, NumericalError, ProbabilityMatrix,
                   ValidationError)
from .decompose import extended_decompose
from .modelselect import RankReport, build_report, degrees_of_freedom
from .polytope import (axis_projections, contains, dual_effects, dual_states, from_dict,
                       realized_effects, realized_states, to_dict)
from .qfit import ShrinkResult, quantum_shrink_factor
from .synth import (ExperimentDesign, build_ground_truth, circle_points, frequencies_from_counts,
                    sample_counts)
from .wlra import FitOptions, FitResult, fit_rank_k

log = logging.getLogger(__name__)

INCLUSION_TOL = 1e-7
MAX_DROP_FRACTION = 0.10
MC_QUANTITIES = ("volume_ratio", "w1", "w1p", "w2", "w2p", "lb_cmin", "ub_cmax")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


class StageError(GptError):
    """A pipeline stage failed.

    ``code`` is ``"validation"`` (exit status 2) or ``"numerical"`` (exit status 3).
    """

    def __init__(self, stage: str, code: str, message: str):
        super().__init__(f"[{stage}] {code}: {message}")
        self.stage = stage
        self.code = code
        self.message = message

    @property
    def exit_code(self) -> int:
        return EXIT_VALIDATION if self.code == "validation" else EXIT_NUMERICAL

    def to_dict(self) -> dict:
        return {"stage": self.stage, "code": self.code, "message": self.message}


class _stage:
    """Context manager tagging any failure inside it with the stage name."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, tp, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        code = _error_code(exc)
        if code is None:
            return False
        raise StageError(self.name, code, str(exc)) from exc


def _error_code(exc) -> Optional[str]:
    """``"validation"``, ``"numerical"`` or None for exceptions left alone.

    LinAlgError derives from ValueError, so numerical types are checked first.
    """
    if isinstance(exc, ValidationError):
        return "validation"
    if isinstance(exc, (GptError, ArithmeticError, np.linalg.LinAlgError, RuntimeError)):
        return "numerical"
    if isinstance(exc, (ValueError, OSError)):
        return "validation"
    return None


# ---------------------------------------------------------------------------
# configuration

@dataclass
class SynthSpec:
    """Depolarized-qubit ground truth and sampling parameters."""
    m: int
    n: int
    w: float = 0.98
    wp: float = 0.98
    counts: float = 20000.0
    design: str = "full"          # "full" or "fiducial"
    f: int = 6
    geometry: str = "sphere"      # "sphere" or "disk" (rebit)
    count_model: str = "poisson"

    def __post_init__(self):
        if self.design not in ("full", "fiducial"):
            raise ValidationError(f"unknown design {self.design!r}")
        if self.geometry not in ("sphere", "disk"):
            raise ValidationError(f"unknown geometry {self.geometry!r}")


@dataclass
class PipelineConfig:
    input: Optional[str] = None
    synth: Optional[SynthSpec] = None
    ranks: tuple = tuple(range(2, 11))
    fit: dict = field(default_factory=dict)
    resamples: int = 100
    out: Optional[str] = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.synth, dict):
            self.synth = SynthSpec(**self.synth)
        if isinstance(self.ranks, str):
            self.ranks = parse_ranks(self.ranks)
        self.ranks = tuple(sorted({int(k) for k in self.ranks}))
        if not self.ranks:
            raise ValidationError("candidate rank set is empty")
        if self.resamples < 0:
            raise ValidationError("resamples must be >= 0")
        if (self.input is None) == (self.synth is None):
            raise ValidationError("give exactly one of an input counts file or a synth spec")
        allowed = {f.name for f in fields(FitOptions)} - {"rank", "seed"}
        extra = set(self.fit) - allowed
        if extra:
            raise ValidationError(f"unknown fit options: {sorted(extra)}")

    def fit_options(self, k: int) -> FitOptions:
        return FitOptions(rank=k, seed=self.seed, **self.fit)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ranks"] = list(self.ranks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        if isinstance(d.get("ranks"), str):
            d["ranks"] = parse_ranks(d["ranks"])
        return cls(**d)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, output location excluded."""
        d = self.to_dict()
        d.pop("out", None)
        d.pop("workers", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def parse_ranks(text: str) -> tuple:
    """``"2..10"``, ``"3,4,5"`` or a mix such as ``"2..4,7"``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                a, b = part.split("..")
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
        except ValueError as exc:
            raise ValidationError(f"cannot parse rank list {text!r}") from exc
    if not out:
        raise ValidationError(f"empty rank list {text!r}")
    return tuple(out)


def load_config(path) -> PipelineConfig:
    """Read a JSON file mirroring :class:`PipelineConfig`."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ValidationError("config must be a JSON object")
    return PipelineConfig.from_dict(d)


def _seeds(seed: int):
    # independent streams: 0 synthetic counts, 1 Monte Carlo
    return np.random.SeedSequence(seed).spawn(2)


# ---------------------------------------------------------------------------
# data

@dataclass
class Counts:
    n0: np.ndarray
    n1: np.ndarray
    mask: np.ndarray

    def frequencies(self) -> FrequencyMatrix:
        return frequencies_from_counts(self.n0, self.n1, self.mask)


def synthesize_counts(spec: SynthSpec, seed) -> Counts:
    if spec.design == "fiducial":
        design = ExperimentDesign.fiducial(spec.m, spec.n, spec.f)
    else:
        design = ExperimentDesign.full(spec.m, spec.n)
    sdirs = None
    if spec.geometry == "disk":
        if design.mode == "fiducial":
            raise ValidationError("the rebit geometry is only available on a full design")
        sdirs = circle_points(spec.m)
    _, D = build_ground_truth(spec.m, spec.n, spec.w, spec.wp, design=design,
                              counts_per_cell=spec.counts, state_dirs=sdirs)
    rng = np.random.default_rng(seed)
    n0, n1 = sample_counts(D, design, spec.counts, rng=rng, count_model=spec.count_model)
    return Counts(n0, n1, design.mask)


def load_counts(config: PipelineConfig) -> Counts:
    if config.input is not None:
        return Counts(*io.read_counts(config.input))
    return synthesize_counts(config.synth, _seeds(config.seed)[0])


# ---------------------------------------------------------------------------
# stages

def _fit_one(args):
    F, opts = args
    return opts.rank, fit_rank_k(F, opts)


def fit_ranks(F: FrequencyMatrix, config: PipelineConfig) -> RankReport:
    """Fit every identifiable candidate rank, optionally in a process pool."""
    m, n = F.shape
    jobs, fits = [], {}
    for k in config.ranks:
        if k > min(m, n) or degrees_of_freedom(k, F) <= 0:
            fits[k] = None
        else:
            jobs.append((F, config.fit_options(k)))
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            done = list(pool.map(_fit_one, jobs))
    else:
        done = [_fit_one(j) for j in jobs]
    fits.update(done)
    return build_report(F, fits)


def fitted_probabilities(fit: FitResult) -> ProbabilityMatrix:
    """Fitted matrix with round-off outside [0, 1] clipped and the unit column exact."""
    D = fit.D
    if D.min() < -1e-6 or D.max() > 1 + 1e-6:
        raise NumericalError(f"fitted matrix leaves [0, 1] by {max(-D.min(), D.max() - 1):.2e}")
    D = np.clip(D, 0.0, 1.0)
    D[:, 0] = 1.0
    return ProbabilityMatrix(D, rank_bound=fit.rank)


@dataclass
class Geometry:
    model: GptModel
    S_real: object
    E_real: object
    S_cons: object
    E_cons: object


def build_geometry(fit: FitResult) -> Geometry:
    D = fitted_probabilities(fit)
    model = extended_decompose(D, fit.rank)
    S_real, E_real = realized_states(model), realized_effects(model)
    return Geometry(model, S_real, E_real, dual_states(E_real), dual_effects(S_real))


def check_inclusion(g: Geometry, tol: float = INCLUSION_TOL) -> None:
    if not contains(g.S_cons, g.S_real.vertices, tol).all():
        raise NumericalError("a realized state lies outside the consistent state space")
    if not contains(g.E_cons, g.E_real.vertices, tol).all():
        raise NumericalError("a realized effect lies outside the consistent effect space")


def geometry_bounds(g: Geometry) -> BoundsReport:
    return analyze_bounds(g.S_real, g.E_real, g.S_cons, g.E_cons)


# ---------------------------------------------------------------------------
# Monte Carlo error bars

def _mc_one(args):
    n0, n1, mask, opts, seed = args
    rng = np.random.default_rng(seed)
    r0, r1 = n0.copy(), n1.copy()
    data = mask.copy()
    data[:, 0] = False
    todo = np.flatnonzero(data.ravel())
    while todo.size:
        r0.flat[todo] = rng.poisson(n0.flat[todo])
        r1.flat[todo] = rng.poisson(n1.flat[todo])
        todo = todo[(r0.flat[todo] + r1.flat[todo]) == 0]
    try:
        F = frequencies_from_counts(r0, r1, mask)
        g = build_geometry(fit_rank_k(F, opts))
        b = geometry_bounds(g)
    except (GptError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return None, str(exc)
    return [getattr(b, q) for q in MC_QUANTITIES], None


@dataclass
class MonteCarloResult:
    std: dict
    mean: dict
    resamples: int
    dropped: int
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def monte_carlo_errorbars(counts: Counts, rank: int, config: PipelineConfig,
                          resamples: Optional[int] = None) -> MonteCarloResult:
    """Standard deviations of the bound quantities under Poisson count resampling.

    Each resample redraws every measured count from a Poisson distribution
    with the observed count as its mean and refits at ``rank`` only.
    Failed resamples are dropped; more than 10% failures is an error.
    """
    R = config.resamples if resamples is None else resamples
    if R < 2:
        raise ValidationError("Monte Carlo error bars need at least 2 resamples")
    opts = config.fit_options(rank)
    seeds = _seeds(config.seed)[1].spawn(R)
    jobs = [(counts.n0, counts.n1, counts.mask, opts, s) for s in seeds]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            out = list(pool.map(_mc_one, jobs))
    else:
        out = [_mc_one(j) for j in jobs]
    vals = np.array([v for v, _ in out if v is not None], dtype=float)
    fails = [e for v, e in out if v is None]
    if len(fails) > MAX_DROP_FRACTION * R:
        raise NumericalError(f"{len(fails)} of {R} Monte Carlo resamples failed")
    if len(vals) < 2:
        raise NumericalError("fewer than 2 successful Monte Carlo resamples")
    std = vals.std(axis=0, ddof=1)
    mean = vals.mean(axis=0)
    return MonteCarloResult(dict(zip(MC_QUANTITIES, std.tolist())),
                            dict(zip(MC_QUANTITIES, mean.tolist())), R, len(fails), fails)


# ---------------------------------------------------------------------------
# report

@dataclass
class Report:
    config: dict
    frequencies: np.ndarray
    rank_report: RankReport
    model: GptModel
    polytopes: dict
    bounds: BoundsReport
    shrink: Optional[ShrinkResult]
    montecarlo: Optional[MonteCarloResult]
    provenance: dict
    timestamp: str
    error: Optional[dict] = None

    @property
    def selected_rank(self) -> int:
        return self.rank_report.selected_rank

    def to_dict(self) -> dict:
        return {
            "selected_rank": self.selected_rank,
            "rank_report": self.rank_report.to_dict(),
            "model": {"S": self.model.states, "E": self.model.effects},
            "polytopes": {k: to_dict(P) for k, P in self.polytopes.items()},
            "bounds": self.bounds.to_dict(),
            "shrink": self.shrink.to_dict() if self.shrink is not None else None,
            "montecarlo": self.montecarlo.to_dict() if self.montecarlo is not None else None,
            "frequencies": self.frequencies,
            "config": self.config,
            "provenance": self.provenance,
            "timestamp": self.timestamp,
        }

    def dumps(self) -> str:
        return io.dumps(self.to_dict())


def provenance(config: PipelineConfig) -> dict:
    return {"config_sha256": config.digest(), "seed": config.seed,
            "versions": {"gpt_tomo": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__,
                         "python": platform.python_version()}}


def _check_finite(report: Report) -> None:
    b = report.bounds.to_dict()
    bad = [k for k, v in b.items() if isinstance(v, float) and not math.isfinite(v)]
    if bad:
        raise NumericalError(f"non-finite bound fields: {bad}")
    if not (np.all(np.isfinite(report.model.states)) and np.all(np.isfinite(report.model.effects))):
        raise NumericalError("non-finite entries in the fitted model")


def run_analysis(config: PipelineConfig, write: bool = True) -> Report:
    """Run every stage and, when ``config.out`` is set and ``write`` is true,
    persist each stage's artifacts plus ``report.json`` in that directory.

    Raises
    ------
    StageError
        Carrying the failing stage name and ``"validation"`` or ``"numerical"``.
    """
    out = Path(config.out) if (write and config.out) else None

    def persist(name, obj):
        if out is not None:
            io.write_json(out / name, obj)

    with _stage("load"):
        counts = load_counts(config)
        F = counts.frequencies()
        if out is not None and config.synth is not None:
            io.write_counts(out / "counts.csv", counts.n0, counts.n1, counts.mask)
    with _stage("select_rank"):
        rr = fit_ranks(F, config)
        persist("rank_report.json", rr.to_dict())
        k = rr.selected_rank
        fit = rr.fits[k]
    with _stage("decompose"):
        g = build_geometry(fit)
        persist("model.json", {"S": g.model.states, "E": g.model.effects})
    with _stage("duals"):
        check_inclusion(g)
        polys = {"states_realized": g.S_real, "states_consistent": g.S_cons,
                 "effects_realized": g.E_real, "effects_consistent": g.E_cons}
        persist("polytopes.json", {n: to_dict(P) for n, P in polys.items()})
    with _stage("bounds"):
        bounds = geometry_bounds(g)
        persist("bounds.json", bounds.to_dict())
    with _stage("qfit"):
        shrink = quantum_shrink_factor(g.S_real, g.E_real)
        persist("shrink.json", shrink.to_dict())
    mc = None
    if config.resamples >= 2:
        with _stage("montecarlo"):
            mc = monte_carlo_errorbars(counts, k, config)
            bounds.std = dict(mc.std)
            persist("montecarlo.json", mc.to_dict())
    report = Report(config=config.to_dict(), frequencies=F.values, rank_report=rr,
                    model=g.model, polytopes=polys, bounds=bounds, shrink=shrink,
                    montecarlo=mc, provenance=provenance(config),
                    timestamp=datetime.now(timezone.utc).isoformat())
    with _stage("report"):
        _check_finite(report)
        if out is not None:
            io.write_atomic(out / "report.json", report.dumps())
    return report


# ---------------------------------------------------------------------------
# plot tables

RANK_TABLE_HEADER = ("k", "chi2", "chi2_lo99", "chi2_hi99", "aic", "weight")


def emit_plot_data(report, outdir) -> list:
    """Write CSV tables for rank selection, polytope vertices, effect-space
    projections and the frequency heatmap. ``report`` may be a :class:`Report`
    or the dict loaded from ``report.json``. Returns the written paths."""
    d = report.to_dict() if isinstance(report, Report) else report
    outdir = Path(outdir)
    written = []

    def table(name, header, rows):
        p = outdir / name
        io.write_table(p, header, rows)
        written.append(p)

    rows = []
    for c in d["rank_report"]["candidates"]:
        lo, hi = c["interval99"]
        rows.append([c["k"], _f(c["chi2"]), _f(lo), _f(hi), _f(c["aic"]), _f(c["weight"])])
    table("rank_table.csv", RANK_TABLE_HEADER, rows)

    for name, P in d["polytopes"].items():
        V = np.asarray(P["vertices"], float)
        table(f"{name}_vertices.csv", [f"x{i}" for i in range(V.shape[1])], V.tolist())
        if name.startswith("effects"):
            for proj in axis_projections(from_dict(P)):
                ax = int(proj.role[4:])
                cols = [f"x{i}" for i in range(V.shape[1]) if i != ax]
                table(f"{name}_{proj.role}.csv", cols, proj.vertices.tolist())

    Fm = np.asarray([[math.nan if v is None else v for v in row] for row in d["frequencies"]],
                    dtype=float)
    table("heatmap.csv", None, Fm.tolist())
    return written


def _f(x):
    return math.nan if x is None else float(x)
