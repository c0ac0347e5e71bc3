"""Steepest-descent thickness design driving the Zener index to one.

Objective J = (xi - 1)^2 / 2 over per-element shell thicknesses.  Energy
derivatives are closed-form: d(e)/d(delta_i) = (e_membrane_i
+ 3 e_bending_i) / delta_i, chained through the energy expressions of the
elasticity constants.  Gradients are averaged over the six fundamental-
domain copies each step so the design stays exactly cubic-symmetric, then
projected onto the box constraints [delta_min, delta_max].
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (BoundsSaturatedWarning, MissingDomainMap,
                     MissingEnergySplit, NonConvergence)
from .geometry import CellSpec, TriMesh, relative_density
from .homogenize import (ElasticConstants, HomogenizationResult,
                         constants_from_energies, run_homogenization, zener)
from .shellfea import Material, ShellModel


@dataclass
class ThicknessField:
    """Per-element shell thickness with box bounds, mm."""

    delta: np.ndarray
    delta_min: float
    delta_max: float

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        if self.delta_min <= 0:
            raise ValueError("delta_min must be positive")
        if self.delta_min > self.delta_max:
            raise ValueError("bounds out of order")
        if np.any(self.delta < self.delta_min - 1e-15) or \
           np.any(self.delta > self.delta_max + 1e-15):
            raise ValueError("thickness outside bounds")

    @classmethod
    def uniform(cls, n: int, value: float, delta_min: float, delta_max: float):
        return cls(np.full(n, float(value)), delta_min, delta_max)

    def n_clamped(self) -> int:
        lo = self.delta <= self.delta_min * (1 + 1e-12)
        hi = self.delta >= self.delta_max * (1 - 1e-12)
        return int(np.sum(lo | hi))


@dataclass
class OptimizationState:
    """Iteration record: current objective and per-iteration history rows."""

    iteration: int = 0
    xi: float = float("nan")
    J: float = float("nan")
    grad_norm: float = float("nan")
    dt: float = 0.0
    history: list = field(default_factory=list)   # dict rows

    def record(self, **row):
        self.history.append(row)

    def write_csv(self, path):
        cols = ["iter", "xi", "J", "rho_bar", "dt", "grad_norm", "n_clamped"]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(cols)
            for row in self.history:
                w.writerow([row[c] for c in cols])


def energy_thickness_derivative(solution, delta) -> np.ndarray:
    """d(total strain energy)/d(delta_i): (e_m_i + 3 e_b_i) / delta_i."""
    if solution.e_membrane is None or solution.e_bending is None:
        raise MissingEnergySplit("solution lacks per-element energy split")
    return (solution.e_membrane + 3.0 * solution.e_bending) / delta


def sensitivity(constants: ElasticConstants, solutions: dict,
                t: ThicknessField) -> np.ndarray:
    """Per-element gradient of J = (xi-1)^2/2 w.r.t. thickness."""
    for kind in "UTS":
        if kind not in solutions:
            raise MissingEnergySplit(f"missing load case {kind}")
    delta = t.delta
    de_u = energy_thickness_derivative(solutions["U"], delta)
    de_t = energy_thickness_derivative(solutions["T"], delta)
    de_s = energy_thickness_derivative(solutions["S"], delta)
    V = constants.V
    dc11 = 2.0 * de_u / V
    dc12 = (de_t / 3.0 - de_u) / V
    dc44 = 2.0 * de_s / V
    xi = zener(constants)
    pre = 2.0 * (xi - 1.0) / (constants.c11 - constants.c12) ** 2
    return pre * (dc44 * (constants.c11 - constants.c12)
                  - constants.c44 * (dc11 - dc12))


def symmetry_average(grad: np.ndarray, domain_map) -> np.ndarray:
    """Mean of each fundamental element's six copies, broadcast back."""
    if domain_map is None:
        raise MissingDomainMap("mesh carries no fundamental-domain copy map")
    sums = np.zeros(domain_map.n_source)
    counts = np.zeros(domain_map.n_source)
    np.add.at(sums, domain_map.source, grad)
    np.add.at(counts, domain_map.source, 1.0)
    return (sums / counts)[domain_map.source]


def descent_step(t: ThicknessField, grad: np.ndarray, dt: float) -> ThicknessField:
    """Projected steepest-descent update with box clamping."""
    if dt <= 0:
        raise ValueError("step size must be positive")
    new = np.clip(t.delta - dt * grad, t.delta_min, t.delta_max)
    return ThicknessField(new, t.delta_min, t.delta_max)


def project_gradient(grad: np.ndarray, t: ThicknessField) -> np.ndarray:
    """Zero gradient components that point outside the feasible box."""
    out = grad.copy()
    at_lo = t.delta <= t.delta_min * (1 + 1e-12)
    at_hi = t.delta >= t.delta_max * (1 - 1e-12)
    out[at_lo & (out > 0)] = 0.0
    out[at_hi & (out < 0)] = 0.0
    return out


@dataclass
class OptimizerConfig:
    tolerance: float = 0.01          # convergence: |xi - 1| below this
    max_iters: int = 500
    move_fraction: float = 0.02      # move limit per step, fraction of bound range
    max_halvings: int = 30           # step rejections per iteration before giving up
    checkpoint_every: int = 0        # 0 disables
    checkpoint_path: str | None = None


def save_checkpoint(path, t: ThicknessField, state: OptimizationState,
                    step_scale: float):
    doc = {
        "iteration": state.iteration,
        "delta": t.delta.tolist(),
        "delta_min": t.delta_min,
        "delta_max": t.delta_max,
        "step_scale": step_scale,
        "history": state.history,
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path):
    with open(path) as f:
        doc = json.load(f)
    t = ThicknessField(np.asarray(doc["delta"]), doc["delta_min"], doc["delta_max"])
    state = OptimizationState(iteration=doc["iteration"])
    state.history = doc["history"]
    return t, state, float(doc.get("step_scale", 1.0))


def optimize_isotropy(mesh: TriMesh, t0: ThicknessField, mat: Material,
                      spec: CellSpec, config: OptimizerConfig | None = None,
                      model: ShellModel | None = None, log=None,
                      resume=None) -> tuple[ThicknessField, OptimizationState]:
    """Iterate solve / sensitivity / symmetry-average / descent to isotropy.

    Stops when |xi - 1| < tolerance.  The step size adapts with a move
    limit (largest thickness change per step = move_fraction * bound range);
    steps that increase J are rejected and retried at half scale, and the
    scale recovers after two accepted steps.  No volume constraint is
    imposed, so the relative density drifts with the design.

    Raises NonConvergence (carrying the best state) at the iteration cap.
    """
    if mesh.domain_map is None:
        raise MissingDomainMap("optimization needs the eighth-cell copy map")
    cfg = config or OptimizerConfig()
    if model is None:
        model = ShellModel(mesh, mat, spec)

    if resume is not None:
        t, state, scale = resume
    else:
        t, state, scale = t0, OptimizationState(), 1.0
        if np.ptp(t0.delta) > 1e-15:
            raise ValueError("initial design must be a uniform field")

    def evaluate(field: ThicknessField) -> HomogenizationResult:
        return run_homogenization(mesh, field.delta, mat, spec, model=model)

    result = evaluate(t)
    xi = zener(result.constants)
    J = 0.5 * (xi - 1.0) ** 2
    state.xi, state.J = xi, J
    successes = 0

    while True:
        if abs(xi - 1.0) < cfg.tolerance:
            return t, state
        if state.iteration >= cfg.max_iters:
            raise NonConvergence(
                f"no convergence in {cfg.max_iters} iterations "
                f"(|xi-1| = {abs(xi - 1):.4f})", state=state)

        grad = sensitivity(result.constants, result.solutions, t)
        grad = symmetry_average(grad, mesh.domain_map)
        grad = project_gradient(grad, t)
        gmax = np.max(np.abs(grad))
        if gmax == 0.0:
            raise NonConvergence(
                "gradient vanished before reaching tolerance "
                "(all variables clamped)", state=state)
        dt_move = cfg.move_fraction * (t.delta_max - t.delta_min) / gmax

        accepted = False
        for _ in range(cfg.max_halvings):
            dt = scale * dt_move
            t_new = descent_step(t, grad, dt)
            result_new = evaluate(t_new)
            xi_new = zener(result_new.constants)
            J_new = 0.5 * (xi_new - 1.0) ** 2
            if J_new <= J or abs(xi_new - 1.0) < cfg.tolerance:
                accepted = True
                break
            scale *= 0.5
            successes = 0
        if not accepted:
            raise NonConvergence(
                f"step size collapsed after {cfg.max_halvings} halvings "
                f"(|xi-1| = {abs(xi - 1):.4f})", state=state)

        t, result, xi, J = t_new, result_new, xi_new, J_new
        successes += 1
        if successes >= 2:
            scale = min(1.0, 2.0 * scale)
            successes = 0

        state.iteration += 1
        state.xi, state.J, state.dt = xi, J, dt
        state.grad_norm = float(np.linalg.norm(grad))
        n_clamped = t.n_clamped()
        state.record(iter=state.iteration, xi=xi, J=J,
                     rho_bar=relative_density(mesh, t.delta, spec), dt=dt,
                     grad_norm=state.grad_norm, n_clamped=n_clamped)
        if log:
            log(f"iter {state.iteration:4d}  xi={xi:.5f}  J={J:.3e}  "
                f"dt={dt:.3e}  clamped={n_clamped}/{len(t.delta)}")
        if n_clamped > 0.9 * len(t.delta):
            warnings.warn("over 90% of thickness variables sit on a bound",
                          BoundsSaturatedWarning, stacklevel=2)
        if cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0 \
                and cfg.checkpoint_path:
            save_checkpoint(cfg.checkpoint_path, t, state, scale)


def finite_difference_energy_derivative(model: ShellModel, delta, element: int,
                                        kind: str, rel_step: float = 1e-5):
    """Central-difference oracle for one element's energy derivative."""
    from .shellfea import LOAD_CASES
    h = rel_step * delta[element]
    out = []
    for sign in (+1.0, -1.0):
        d = delta.copy()
        d[element] += sign * h
        sols = model.solve_cases(d, [LOAD_CASES[kind]])
        out.append(sols[kind].e_total)
    return (out[0] - out[1]) / (2.0 * h)


def finite_difference_objective_gradient(mesh, model: ShellModel, t: ThicknessField,
                                         mat: Material, spec: CellSpec,
                                         elements, rel_step: float = 1e-5):
    """Central-difference oracle for dJ/d(delta_i) on selected elements."""
    out = np.zeros(len(elements))
    for k, el in enumerate(elements):
        vals = []
        h = rel_step * t.delta[el]
        for sign in (+1.0, -1.0):
            d = t.delta.copy()
            d[el] += sign * h
            r = run_homogenization(mesh, d, mat, spec, model=model)
            xi = zener(r.constants)
            vals.append(0.5 * (xi - 1.0) ** 2)
        out[k] = (vals[0] - vals[1]) / (2.0 * h)
    return out
