"""Adaptive loop: solve, estimate, mark (Doerfler), refine (newest-vertex bisection)."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import estimator as est
from . import flux as fx
from .mesh import Mesh2D, refine
from .problems import ProblemSpec, facet_weights, get_problem
from .solvers import DgParameters, solve_problem
from .spaces import FeFunction

log = logging.getLogger(__name__)

CSV_HEADER = "iter,num_cells,num_dofs,energy_error,eta,osc,efficiency_index,wall_time_s"


@dataclass
class AmrConfig:
    problem: str = "kellogg"
    theta: float = 0.3
    degree: int = 1
    recovery_degree: int | None = None
    averaging_degree: str = "k-1"
    discretization: str = "cg"
    tol: float = 0.01
    max_cells: int = 200_000
    max_iters: int = 200
    initial_refinement: int = 1
    dg_gamma: float | None = None
    dg_delta: int = 1
    solver_tol: float = 1e-12
    solver_backend: str = "direct"
    timing: bool = True
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if self.degree not in (1, 2, 3):
            raise ValueError(f"degree must be 1, 2 or 3, got {self.degree}")
        if self.discretization not in ("cg", "dg"):
            raise ValueError(f"discretization must be cg or dg, got {self.discretization!r}")
        smax = self.degree - 1 if self.discretization == "cg" else self.degree
        if self.recovery_degree is None:
            self.recovery_degree = self.degree - 1
        if not 0 <= self.recovery_degree <= smax:
            raise ValueError(f"recovery degree must lie in 0..{smax}")
        if self.averaging_degree not in ("s", "k-1"):
            raise ValueError("averaging degree must be 's' or 'k-1'")
        if self.max_cells < 1 or self.max_iters < 1:
            raise ValueError("max_cells and max_iters must be positive")

    @property
    def dg_params(self) -> DgParameters:
        return DgParameters.default(self.degree, self.dg_gamma, self.dg_delta)


@dataclass
class IterationRecord:
    iter: int
    num_cells: int
    num_dofs: int
    energy_error: float | None
    eta: float
    osc: float
    efficiency_index: float | None
    wall_time_s: float | None
    relative_error: float | None = None
    conservation: float = 0.0
    conformity: float = 0.0
    gram_min_pivot: float | None = None
    reliable: bool | None = None
    h_min: float = 0.0

    def csv_row(self) -> str:
        def fmt(v):
            return "" if v is None else repr(float(v))
        return ",".join([str(self.iter), str(self.num_cells), str(self.num_dofs), fmt(self.energy_error),
                         fmt(self.eta), fmt(self.osc), fmt(self.efficiency_index), fmt(self.wall_time_s)])


@dataclass
class ConvergenceHistory:
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "running"

    def append(self, rec: IterationRecord) -> None:
        if self.records and rec.num_cells < self.records[-1].num_cells:
            raise ValueError("cell counts must be nondecreasing")
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records],
                        dtype=float)

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.csv_row() for r in self.records]) + "\n"

    def mean_efficiency(self, skip: int = 3) -> float:
        e = self.column("efficiency_index")[skip:]
        return float(np.nanmean(e)) if len(e) else float("nan")

    def __len__(self) -> int:
        return len(self.records)


def dorfler_mark(eta_K: np.ndarray, theta: float) -> np.ndarray:
    """Smallest prefix of the descending ``eta^2`` order holding ``theta`` of the total.

    Ties are broken by element index. A relative slack of ``1e-14`` absorbs
    rounding in the partial sums. Returns sorted element ids; empty when all
    indicators vanish.
    """
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    e2 = np.asarray(eta_K, dtype=float) ** 2
    if not np.all(np.isfinite(e2)):
        raise ValueError("indicators must be finite")
    order = np.argsort(-e2, kind="stable")
    cs = np.cumsum(e2[order])
    if len(cs) == 0 or cs[-1] == 0:
        return np.zeros(0, dtype=np.int64)
    target = theta * cs[-1] * (1 - 1e-14)
    n = int(np.searchsorted(cs, target, side="left")) + 1
    return np.sort(order[:min(n, len(cs))])


def fit_rate(n: np.ndarray, e: np.ndarray, last_fraction: float = 0.5) -> float:
    """Least-squares slope of ``log e`` against ``log n`` over the last iterations."""
    n, e = np.asarray(n, float), np.asarray(e, float)
    ok = np.isfinite(e) & (e > 0)
    n, e = n[ok], e[ok]
    m = max(2, int(np.ceil(len(n) * last_fraction)))
    n, e = n[-m:], e[-m:]
    if len(n) < 2:
        return float("nan")
    return float(np.polyfit(np.log(n), np.log(e), 1)[0])


@dataclass(eq=False)
class AmrResult:
    history: ConvergenceHistory
    mesh: Mesh2D
    solution: FeFunction
    eta_K: np.ndarray
    recovered: fx.RecoveredFlux
    config: AmrConfig


def resolve_problem(config: AmrConfig) -> ProblemSpec:
    prob = get_problem(config.problem)
    if config.tensors:
        prob.tensors = {**prob.tensors, **config.tensors}
    return prob


def adapt_loop(config: AmrConfig, problem: ProblemSpec | None = None, mesh: Mesh2D | None = None,
               callback=None) -> AmrResult:
    """Run the adaptive loop until the relative error, cell or iteration limit is hit."""
    prob = problem or resolve_problem(config)
    mesh = mesh or prob.initial_mesh(config.initial_refinement)
    params = config.dg_params
    e_norm = est.exact_energy(prob, mesh) if prob.grad_u is not None else None
    hist = ConvergenceHistory()
    it = 0
    while True:
        t0 = time.perf_counter()
        coeff = prob.coefficient(mesh)
        weights = facet_weights(mesh, coeff)
        u, _ = solve_problem(prob, mesh, config.degree, config.discretization, params,
                             tol=config.solver_tol, backend=config.solver_backend)
        rec = fx.recover(u, prob, config.recovery_degree, config.discretization, config.averaging_degree,
                         params=params, coeff=coeff, weights=weights)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ind = est.estimate(u, rec, prob, coeff)
        wall = time.perf_counter() - t0
        err = ind.error
        rel = err / e_norm if err is not None and e_norm else None
        r = IterationRecord(
            iter=it, num_cells=mesh.num_elements, num_dofs=u.space.ndofs, energy_error=err,
            eta=ind.eta, osc=ind.osc, efficiency_index=ind.efficiency,
            wall_time_s=wall if config.timing else None, relative_error=rel,
            conservation=rec.report["max_conservation"], conformity=rec.report["conformity"],
            gram_min_pivot=rec.report.get("gram_min_pivot"),
            # the bound error <= eta + osc covers the conforming error only
            reliable=None if err is None or config.discretization != "cg"
            else bool(err <= ind.eta + ind.osc + 1e-10),
            h_min=float(mesh.h.min()))
        hist.append(r)
        log.info("iter %d cells %d dofs %d err %s eta %.4e", it, r.num_cells, r.num_dofs, err, ind.eta)
        if callback is not None:
            callback(r)
        if ind.eta == 0:
            hist.status = "converged_exact"
            break
        if rel is not None and rel < config.tol:
            hist.status = "converged"
            break
        if it + 1 >= config.max_iters:
            hist.status = "max_iters"
            break
        marked = dorfler_mark(ind.eta_K, config.theta)
        if len(marked) == 0:
            hist.status = "converged_exact"
            break
        new = refine(mesh, marked)
        if new.num_elements > config.max_cells:
            hist.status = "max_cells"
            break
        mesh = new
        it += 1
    return AmrResult(hist, mesh, u, ind.eta_K, rec, config)
