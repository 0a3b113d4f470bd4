"""Incremental quadratic-minimization domain.

Instances are averages of n ill-conditioned diagonal quadratics whose
conditioning is steered by a single parameter: the first half of each
diagonal is drawn from [1, 10^(xi/2)], the second half from [10^(-xi/2), 1].
The reference solver keeps one Hessian surrogate per component, refreshed by
greedy rank-k symmetric updates, and maintains the inverse of the surrogate
mean with low-rank inverse updates. Two variants are kept side by side:
variant "a" uses explicit inversion and diagonal-difference selection,
variant "b" uses linear solves, row-norm selection, and a gradient
correction step on the snapshot state.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from ..model import Individual
from ..sandbox import Probe, ProbeSet, SandboxError
from .base import RunSummary

WORST_SUBOPTIMALITY = 1e9


class ShapeMismatch(Exception):
    pass


class OddDimension(Exception):
    pass


class ZeroGradSum(Exception):
    pass


class NumericalBreakdown(Exception):
    def __init__(self, iteration: int, detail: str = ""):
        self.iteration = iteration
        super().__init__(f"objective became non-finite at iteration {iteration} {detail}".strip())


@dataclass(eq=False)
class QuadraticInstance:
    """Problem data: per-component diagonals and linear terms."""

    n: int
    d: int
    A_diag: np.ndarray  # (n, d), all entries > 0
    b: np.ndarray  # (n, d)
    xi: float
    rng_seed: int

    def __post_init__(self):
        self.A_diag = np.asarray(self.A_diag, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.A_diag.shape != (self.n, self.d) or self.b.shape != (self.n, self.d):
            raise ShapeMismatch(
                f"expected two ({self.n}, {self.d}) arrays, got "
                f"{self.A_diag.shape} and {self.b.shape}"
            )
        if not (self.A_diag > 0).all():
            raise ValueError("all diagonal entries must be > 0")
        self.A_diag.setflags(write=False)
        self.b.setflags(write=False)

    def to_json(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "d": self.d,
            "xi": self.xi,
            "seed": self.rng_seed,
            "A_diag": self.A_diag.tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "QuadraticInstance":
        return cls(
            n=int(data["n"]),
            d=int(data["d"]),
            A_diag=np.asarray(data["A_diag"], dtype=float),
            b=np.asarray(data["b"], dtype=float),
            xi=float(data["xi"]),
            rng_seed=int(data["seed"]),
        )


def save_instance(inst: QuadraticInstance, path: Path) -> None:
    Path(path).write_text(json.dumps(inst.to_json()), encoding="utf-8")


def load_instance(path: Path) -> QuadraticInstance:
    return QuadraticInstance.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def generate_instance(n: int, d: int, xi: float, rng_seed: int) -> QuadraticInstance:
    """Sample an instance; deterministic for a fixed seed."""
    if d % 2 != 0 or d < 2:
        raise OddDimension(f"dimension must be even and >= 2, got {d}")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not xi > 0:
        raise ValueError("xi must be > 0")
    rng = np.random.default_rng(rng_seed)
    half = d // 2
    high = rng.uniform(1.0, 10.0 ** (xi / 2.0), size=(n, half))
    low = rng.uniform(10.0 ** (-xi / 2.0), 1.0, size=(n, half))
    a_diag = np.concatenate([high, low], axis=1)
    b = rng.uniform(0.0, 1.0e3, size=(n, d))
    return QuadraticInstance(n=n, d=d, A_diag=a_diag, b=b, xi=xi, rng_seed=rng_seed)


def objective_and_gradient(
    inst: QuadraticInstance, x: np.ndarray
) -> tuple[float, np.ndarray]:
    """Average objective value and its gradient at x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.d,):
        raise ShapeMismatch(f"x must have shape ({inst.d},), got {x.shape}")
    value = float(np.mean(0.5 * (inst.A_diag * x * x).sum(axis=1) + inst.b.dot(x)))
    grad = (inst.A_diag * x + inst.b).mean(axis=0)
    return value, grad


def closed_form_optimum(inst: QuadraticInstance) -> tuple[np.ndarray, float]:
    """Analytic minimizer: (mean A) x = -(mean b)."""
    mean_a = inst.A_diag.mean(axis=0)
    mean_b = inst.b.mean(axis=0)
    x_star = -mean_b / mean_a
    return x_star, objective_and_gradient(inst, x_star)[0]


def _check_square(name: str, m: np.ndarray, d: int) -> None:
    if m.shape != (d, d):
        raise ShapeMismatch(f"{name} must be ({d}, {d}), got {m.shape}")


def srk_update(G: np.ndarray, A: np.ndarray, U: np.ndarray, variant: str) -> np.ndarray:
    """Symmetric rank-k surrogate refresh toward A along the columns of U.

    Returns G unchanged when the inner matrix is rank deficient. On the
    full-rank path the output satisfies G' U = A U.
    """
    G = np.asarray(G, dtype=float)
    A = np.asarray(A, dtype=float)
    U = np.asarray(U, dtype=float)
    d = G.shape[0]
    _check_square("G", G, d)
    _check_square("A", A, d)
    if U.ndim != 2 or U.shape[0] != d:
        raise ShapeMismatch(f"U must be ({d}, k), got {U.shape}")
    diff = G - A
    temp = U.T @ diff @ U
    if np.linalg.matrix_rank(temp) < U.shape[1]:
        return G
    if variant == "a":
        inner = np.linalg.inv(temp)
    else:
        inner = np.linalg.solve(temp, np.eye(temp.shape[0]))
    return G - diff @ U @ inner @ U.T @ diff


def greedy_select(G: np.ndarray, A: np.ndarray, k: int, variant: str) -> np.ndarray:
    """Pick the k coordinates with the largest surrogate residual.

    Variant "a" scores by the diagonal of G - A; variant "b" scores by row
    norms of G - A. Scores sort descending with a stable ascending-index
    tie-break; column j of the result is the basis vector of the j-th pick.
    """
    G = np.asarray(G, dtype=float)
    A = np.asarray(A, dtype=float)
    d = G.shape[0]
    _check_square("G", G, d)
    _check_square("A", A, d)
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    diff = G - A
    if variant == "a":
        scores = np.diag(diff)
    else:
        scores = np.linalg.norm(diff, axis=1)
    indices = np.argsort(-scores, kind="stable")[:k]
    U = np.zeros((d, k))
    U[indices, np.arange(k)] = 1.0
    return U


def woodbury_inverse_update(
    A_inv: np.ndarray, U: np.ndarray, V: np.ndarray, W: np.ndarray, variant: str
) -> np.ndarray:
    """Low-rank inverse refresh: the inverse of (A - U W^-1 V^T) from A_inv.

    The inner matrix is W - U^T A_inv V. When it is rank deficient, variant
    "a" returns A_inv unchanged while variant "b" substitutes a pseudoinverse;
    otherwise variant "a" inverts it and variant "b" solves against identity.
    """
    A_inv = np.asarray(A_inv, dtype=float)
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    d = A_inv.shape[0]
    _check_square("A_inv", A_inv, d)
    k = U.shape[1] if U.ndim == 2 else 0
    if U.shape != (d, k) or V.shape != (d, k) or W.shape != (k, k):
        raise ShapeMismatch(
            f"expected U,V of shape ({d}, k) and W of shape (k, k); "
            f"got {U.shape}, {V.shape}, {W.shape}"
        )
    temp = W - U.T @ A_inv @ V
    if np.linalg.matrix_rank(temp) < k:
        if variant == "a":
            return A_inv
        temp_inv = np.linalg.pinv(temp)
    elif variant == "a":
        temp_inv = np.linalg.inv(temp)
    else:
        temp_inv = np.linalg.solve(temp, np.eye(temp.shape[0]))
    return A_inv + A_inv @ U @ temp_inv @ V.T @ A_inv


def gradient_correction_step(
    x_new: np.ndarray,
    grad_sum: np.ndarray,
    inst: QuadraticInstance,
    t: int,
    coeff: float = 0.1,
) -> np.ndarray:
    """Damped full-gradient nudge followed by gradient-norm-ratio rescaling.

    The correction gradient is the unnormalized component sum at x_new. When
    it vanishes the iterate is already stationary and is returned unchanged
    (rescaling by a zero ratio would wipe a converged point).
    """
    x_new = np.asarray(x_new, dtype=float)
    if x_new.shape != (inst.d,):
        raise ShapeMismatch(f"x_new must have shape ({inst.d},), got {x_new.shape}")
    if t < 0:
        raise ValueError("t must be >= 0")
    denom = float(np.linalg.norm(grad_sum))
    if denom == 0.0:
        raise ZeroGradSum("grad_sum has zero norm; scaling undefined")
    g_c = (inst.A_diag * x_new + inst.b).sum(axis=0)
    g_norm = float(np.linalg.norm(g_c))
    if g_norm == 0.0:
        return x_new
    corrected = x_new - coeff * g_c / (t + 1)
    return corrected * (g_norm / denom)


@dataclass(frozen=True)
class SolverVariant:
    variant: str
    k: int
    correction_coeff: float = 0.1

    def __post_init__(self):
        if self.variant not in ("a", "b"):
            raise ValueError(f"variant must be 'a' or 'b', got {self.variant!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(eq=False)
class SolverState:
    """Mutable per-solve state: iterate, snapshots, surrogates, mean inverse."""

    x: np.ndarray
    z: np.ndarray  # (n, d) snapshot points
    G: list[np.ndarray]  # n dense surrogates
    B_bar_inv: np.ndarray
    t: int
    trace: list[tuple[int, float, float]]


def lisr_solve(
    inst: QuadraticInstance,
    variant: SolverVariant,
    x0: np.ndarray,
    max_iter: int,
    tol: float,
    return_state: bool = False,
):
    """Run the incremental rank-k solver; returns the best-objective iterate.

    One component is refreshed per iteration (cyclic order). Each iteration:
    greedy column selection, symmetric rank-k surrogate update, low-rank
    refresh of the inverse surrogate mean, then the quasi-Newton step

        x = B_bar_inv @ ((sum_i G_i z_i - sum_i (A_i z_i + b_i)) / n)

    which is recorded in the trace. Variant "b" additionally passes the step
    through gradient_correction_step before it becomes the stored snapshot
    z_i, steering subsequent iterations; the correction is skipped when the
    snapshot gradient sum has zero norm (already stationary).

    Stops when |f_t - f_{t-1}| <= tol * (1 + |f_t|) or after max_iter
    iterations. Raises NumericalBreakdown if the objective becomes
    non-finite.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (inst.d,):
        raise ShapeMismatch(f"x0 must have shape ({inst.d},), got {x0.shape}")
    if not tol > 0:
        raise ValueError("tol must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if variant.k > inst.d:
        raise ValueError(f"k={variant.k} exceeds dimension {inst.d}")

    n, d, k = inst.n, inst.d, variant.k
    started = time.perf_counter()
    a_dense = [np.diag(inst.A_diag[i]) for i in range(n)]
    scale = [float(inst.A_diag[i].max()) for i in range(n)]
    state = SolverState(
        x=x0.copy(),
        z=np.tile(x0, (n, 1)),
        G=[np.eye(d) * scale[i] for i in range(n)],
        B_bar_inv=np.linalg.inv(np.diag(np.asarray(scale).mean() * np.ones(d))),
        t=0,
        trace=[],
    )
    # Mean of the initial surrogates is (mean_i c_i) * I, inverted directly once.
    grad_sum = (inst.A_diag * state.z).sum(axis=0) + inst.b.sum(axis=0)
    gz_sum = np.asarray([scale[i] * state.z[i] for i in range(n)]).sum(axis=0)

    x_best = x0.copy()
    f_best = math.inf
    f_prev = None
    for t in range(max_iter):
        i = t % n
        U = greedy_select(state.G[i], a_dense[i], k, variant.variant)
        g_new = srk_update(state.G[i], a_dense[i], U, variant.variant)
        if g_new is not state.G[i]:
            diff = state.G[i] - a_dense[i]
            p = diff @ U
            inner = U.T @ diff @ U
            state.B_bar_inv = woodbury_inverse_update(
                state.B_bar_inv, p, p, n * inner, variant.variant
            )
            gz_sum = gz_sum + (g_new - state.G[i]) @ state.z[i]
            state.G[i] = g_new
        x_new = state.B_bar_inv @ ((gz_sum - grad_sum) / n)
        with np.errstate(over="ignore", invalid="ignore"):
            f_new = float(
                np.mean(0.5 * (inst.A_diag * x_new * x_new).sum(axis=1) + inst.b.dot(x_new))
            )
        if not math.isfinite(f_new):
            raise NumericalBreakdown(t)
        state.trace.append((t, f_new, time.perf_counter() - started))
        state.x = x_new
        state.t = t + 1
        if f_new < f_best:
            f_best = f_new
            x_best = x_new.copy()
        z_next = x_new
        if variant.variant == "b" and np.linalg.norm(grad_sum) > 0.0:
            z_next = gradient_correction_step(
                x_new, grad_sum, inst, t, coeff=variant.correction_coeff
            )
        delta = z_next - state.z[i]
        grad_sum = grad_sum + inst.A_diag[i] * delta
        gz_sum = gz_sum + state.G[i] @ delta
        state.z[i] = z_next
        if f_prev is not None and abs(f_new - f_prev) <= tol * (1.0 + abs(f_new)):
            break
        f_prev = f_new

    if return_state:
        return x_best, state.trace, state
    return x_best, list(state.trace)


def iterations_to_tolerance(
    trace: list[tuple[int, float, float]], f_star: float, rel_tol: float = 1e-6
) -> int | None:
    """First iteration index whose objective is within rel_tol*(1+|f*|) of f*."""
    threshold = rel_tol * (1.0 + abs(f_star))
    for t, value, _ in trace:
        if value - f_star <= threshold:
            return t
    return None


def save_trace_csv(trace: list[tuple[int, float, float]], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "objective", "elapsed_s"])
        for t, value, elapsed in trace:
            writer.writerow([t, repr(value), repr(elapsed)])


def load_trace_csv(path: Path) -> list[tuple[int, float, float]]:
    trace = []
    with open(path, "r", newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            trace.append((int(row["t"]), float(row["objective"]), float(row["elapsed_s"])))
    return trace


def _finite_vector(value: Any, length: int) -> np.ndarray | None:
    if not isinstance(value, list) or len(value) != length:
        return None
    try:
        array = np.asarray([float(v) for v in value], dtype=float)
    except (TypeError, ValueError):
        return None
    if not np.isfinite(array).all():
        return None
    return array


class QuadraticDomain:
    """Binds solve_quad candidates to scoring against the analytic optimum."""

    domain_id = "quadratic"
    task = "solve_quad"
    entrypoint_params = ("A_diag", "b", "x0", "max_iter", "tol")
    knowledge_tags = ("quadratic", "optimization", "numerics")

    fixture_max_iter = 150
    fixture_tol = 1e-10

    def __init__(self):
        self._fixtures = [
            generate_instance(6, 4, 3.0, 101),
            generate_instance(6, 4, 3.0, 202),
        ]
        self._probe_instance = generate_instance(2, 2, 1.0, 7)

    def fixtures(self) -> list[QuadraticInstance]:
        return list(self._fixtures)

    def _request(self, inst: QuadraticInstance, max_iter: int) -> dict[str, Any]:
        return {
            "task": self.task,
            "A_diag": inst.A_diag.tolist(),
            "b": inst.b.tolist(),
            "x0": [0.0] * inst.d,
            "max_iter": max_iter,
            "tol": self.fixture_tol,
        }

    def probes(self) -> ProbeSet:
        return ProbeSet(
            probes=(
                Probe(
                    probe_id="solve-shape",
                    request=self._request(self._probe_instance, max_iter=3),
                    expect={"x_len": self._probe_instance.d},
                ),
            )
        )

    def check_probe(self, probe: Probe, response: Mapping[str, Any]) -> tuple[bool, str]:
        x = _finite_vector(response.get("x"), int(probe.expect["x_len"]))
        if x is None:
            return False, "response field 'x' is not a finite vector of the right length"
        trace = response.get("trace")
        if not isinstance(trace, list):
            return False, "response field 'trace' is not a list"
        for entry in trace:
            if not (isinstance(entry, list) and len(entry) == 2):
                return False, "trace entries must be [t, objective] pairs"
        return True, "ok"

    def _suboptimality(self, inst: QuadraticInstance, x: np.ndarray) -> float:
        _, f_star = closed_form_optimum(inst)
        value, _ = objective_and_gradient(inst, x)
        return max(0.0, (value - f_star) / (1.0 + abs(f_star)))

    def score(self, call: Callable[[Mapping[str, Any]], dict[str, Any]]):
        subopts = []
        ok = True
        details = []
        for index, inst in enumerate(self._fixtures):
            try:
                response = call(self._request(inst, self.fixture_max_iter))
            except SandboxError as exc:
                subopts.append(WORST_SUBOPTIMALITY)
                ok = False
                details.append(f"fixture {index}: {type(exc).__name__}: {exc}")
                continue
            x = _finite_vector(response.get("x"), inst.d)
            if x is None:
                subopts.append(WORST_SUBOPTIMALITY)
                ok = False
                details.append(f"fixture {index}: malformed solution vector")
                continue
            subopts.append(self._suboptimality(inst, x))
        metrics = {"suboptimality": float(np.mean(subopts))}
        return metrics, ok, "; ".join(details) if details else "scored"

    def worst_metrics(self) -> dict[str, float]:
        return {"suboptimality": WORST_SUBOPTIMALITY}

    def report_rows(self, summary: RunSummary) -> list:
        from ..reporting import ReportRow
        from .tsp import gap_percent

        def suboptimality_of(individual: Individual) -> float:
            if individual.report is None:
                return WORST_SUBOPTIMALITY
            return individual.report.metrics.get("suboptimality", WORST_SUBOPTIMALITY)

        base = suboptimality_of(summary.initial_best)
        cae = suboptimality_of(summary.final_best)
        # Degenerate floor: a fully converged baseline would make the gap undefined.
        base = max(base, 1e-15)
        return [
            ReportRow(
                scenario_id="quadratic-evolution",
                base_obj=base,
                cae_obj=cae,
                gap_percent=gap_percent(base, cae),
                runs_averaged=1,
                seeds=(summary.rng_seed,),
            )
        ]
