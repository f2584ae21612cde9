"""Primal-dual iterations for the lifted saddle-point problem.

Two variants share the dual step ``sigma <- P_K(sigma + alpha grad v_bar)``:

* ``pd``: explicit primal ascent ``v <- P_[0,1](v + beta div sigma)`` with
  ``alpha beta L^2 <= 1``, ``L`` the gradient-norm bound;
* ``proj``: preconditioned step ``v <- v - beta Lap^{-1} div sigma`` with
  ``alpha beta <= 1``, where ``Lap = -grad^T grad`` is inverted exactly.
  Clipping ``v`` is not the proximal map in the preconditioned metric and
  stalls the iteration, so it is off by default for this variant.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import certified_dual, dual_objective, extract_level, primal_energy
from .grid import divergence, gradient, operator_norm_bound
from .poisson import LaplaceSolver
from .problem import Problem
from .project import (apply_K_projection, apply_slice_constraints, project_neumann_trace,
                      project_primal)

log = logging.getLogger(__name__)

GAP_CONSTANT = 10.0


class SolverError(RuntimeError):
    """Invalid solver configuration."""


class NumericalError(RuntimeError):
    """A NaN or infinity appeared in the iterates."""


@dataclass
class SolverConfig:
    algorithm: str = "proj"
    alpha: float | None = None
    beta: float | None = None
    max_iters: int = 5000
    tol: float = 1e-5
    check_every: int = 100
    clamp: bool | None = None
    slab: str = "dirichlet"

    def resolved(self, problem: Problem) -> "SolverConfig":
        """Fill in default step sizes and check the step-size condition."""
        if self.algorithm not in ("pd", "proj"):
            raise SolverError(f"unknown algorithm {self.algorithm!r}")
        L = operator_norm_bound(problem.spec)
        if self.algorithm == "pd":
            alpha = self.alpha if self.alpha is not None else 1.0 / L
            beta = self.beta if self.beta is not None else 1.0 / L
            if alpha * beta * L * L > 1.0 + 1e-12:
                raise SolverError(f"pd needs alpha*beta*L^2 <= 1 (got {alpha * beta * L * L:.3g})")
        else:
            alpha = self.alpha if self.alpha is not None else 1.0
            beta = self.beta if self.beta is not None else 1.0
            if alpha * beta > 1.0 + 1e-12:
                raise SolverError(f"proj needs alpha*beta <= 1 (got {alpha * beta:.3g})")
        if alpha <= 0 or beta <= 0:
            raise SolverError("step sizes must be positive")
        clamp = self.clamp if self.clamp is not None else self.algorithm == "pd"
        return SolverConfig(self.algorithm, alpha, beta, self.max_iters, self.tol,
                            self.check_every, clamp, self.slab)


@dataclass
class IterState:
    v: np.ndarray
    v_bar: np.ndarray
    sigma: np.ndarray
    it: int = 0
    residual: float = np.inf


@dataclass
class RunReport:
    algorithm: str
    iters: int = 0
    converged: bool = False
    wall_ms: float = 0.0
    checkpoints: list[int] = field(default_factory=list)
    residual_history: list[float] = field(default_factory=list)
    dual_history: list[float] = field(default_factory=list)
    flux_dual_history: list[float] = field(default_factory=list)
    primal_history: list[float] = field(default_factory=list)
    gap_history: list[float] = field(default_factory=list)
    gap_floor: float = 0.0

    @property
    def dual(self) -> float:
        return self.dual_history[-1]

    @property
    def flux_dual(self) -> float:
        return self.flux_dual_history[-1]

    @property
    def primal(self) -> float:
        return self.primal_history[-1]

    @property
    def gap(self) -> float:
        return self.gap_history[-1]


def feasible_dual(sigma: np.ndarray, problem: Problem) -> np.ndarray:
    """Constraint-set projection followed by slice and Neumann conditions."""
    sigma = apply_K_projection(sigma, problem)
    sigma = apply_slice_constraints(sigma, problem)
    return project_neumann_trace(sigma, problem)


def initial_state(problem: Problem) -> IterState:
    v = problem.initial_v()
    sigma = feasible_dual(problem.lattice.zeros_flux(), problem)
    return IterState(v, v.copy(), sigma)


def _dual_step(state: IterState, problem: Problem, alpha: float) -> np.ndarray:
    g = gradient(problem.lattice, state.v_bar, problem.ghosts)
    return feasible_dual(state.sigma + alpha * g, problem)


def _finish(state, v_new, sigma, beta):
    res = float(np.linalg.norm(v_new - state.v) / (beta * np.linalg.norm(state.v) + 1e-30))
    v_bar = 2.0 * v_new - state.v
    return IterState(v_new, v_bar, sigma, state.it + 1, res)


def step_pd(state: IterState, problem: Problem, cfg: SolverConfig) -> IterState:
    """One explicit primal-dual step; ``cfg`` must be resolved."""
    sigma = _dual_step(state, problem, cfg.alpha)
    v_new = state.v + cfg.beta * divergence(problem.lattice, sigma)
    if cfg.clamp:
        v_new = project_primal(v_new, problem)
    return _finish(state, v_new, sigma, cfg.beta)


def step_proj(state: IterState, problem: Problem, cfg: SolverConfig,
              laplace: LaplaceSolver) -> IterState:
    """One preconditioned primal-dual step with an exact Laplace solve."""
    sigma = _dual_step(state, problem, cfg.alpha)
    w = laplace.solve(divergence(problem.lattice, sigma))
    v_new = state.v - cfg.beta * w
    if cfg.clamp:
        v_new = project_primal(v_new, problem)
    return _finish(state, v_new, sigma, cfg.beta)


def _checkpoint(state: IterState, problem: Problem, report: RunReport) -> None:
    if not (np.all(np.isfinite(state.v)) and np.all(np.isfinite(state.sigma))):
        raise NumericalError(f"non-finite iterate at iteration {state.it}")
    u = extract_level(state.v_bar, problem, 0.5)
    primal = primal_energy(u, problem)
    dual = certified_dual(state.sigma, problem)
    report.checkpoints.append(state.it)
    report.residual_history.append(state.residual)
    report.primal_history.append(primal)
    report.dual_history.append(dual)
    report.flux_dual_history.append(dual_objective(state.sigma, problem))
    report.gap_history.append(primal - dual)
    log.debug("it %d res %.3e primal %.6f dual %.6f", state.it, state.residual, primal, dual)


def run(problem: Problem, config: SolverConfig | None = None,
        init: IterState | None = None) -> tuple[IterState, RunReport]:
    """Iterate until the relative primal residual drops below ``tol``.

    Stops at ``max_iters`` otherwise (``report.converged`` is then False).
    Checkpoints every ``check_every`` iterations record the primal energy of
    the 0.5 level set, the certified dual value, the flux dual value and the
    gap. Raises ``NumericalError`` on non-finite iterates.
    """
    cfg = (config or SolverConfig()).resolved(problem)
    state = init if init is not None else initial_state(problem)
    report = RunReport(cfg.algorithm, gap_floor=-GAP_CONSTANT * problem.spec.h)
    laplace = LaplaceSolver(problem.lattice, cfg.slab) if cfg.algorithm == "proj" else None
    t0 = time.perf_counter()
    for _ in range(cfg.max_iters):
        if cfg.algorithm == "pd":
            state = step_pd(state, problem, cfg)
        else:
            state = step_proj(state, problem, cfg, laplace)
        if not np.isfinite(state.residual):
            raise NumericalError(f"non-finite residual at iteration {state.it}")
        if state.residual <= cfg.tol:
            report.converged = True
            break
        if state.it % cfg.check_every == 0:
            _checkpoint(state, problem, report)
    _checkpoint(state, problem, report)
    report.iters = state.it
    report.wall_ms = 1e3 * (time.perf_counter() - t0)
    return state, report
