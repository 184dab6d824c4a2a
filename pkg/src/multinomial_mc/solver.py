"""Lifted coordinate gradient descent for nuclear-norm penalized slice problems.

The slice matrix is represented as ``W = sum_k w_k u_k v_k^T`` with unit
vectors and ``w >= 0``, and the lifted objective

    F(w) = lam * sum(w) + Psi(W)

is minimized greedily: each outer step either adds the atom given by the top
singular pair of ``-grad Psi(W)`` (with an exact line search on its weight) or,
when no atom decreases ``F`` fast enough, reoptimizes all weights on the
current support. The sup-norm bound on the parameter is not enforced.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy import optimize
from scipy.sparse.linalg import svds

from .links import ConditionalLogitLink
from .loss import SliceProblem
from .tensor import AtomicDecomposition, ObservationSet, ParameterTensor, reconstruct

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """The objective became non-finite during solving."""


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings; ``epsilon=None`` means ``1e-4 * Psi(0)`` of each slice."""

    lam: float
    epsilon: Optional[float] = None
    max_outer_iters: int = 2000
    power_iter_tol: float = 1e-9
    power_iter_max: int = 500
    singular_method: str = "lanczos"
    support_reopt_tol: float = 1e-8
    support_reopt_max: int = 200
    prune_tol: float = 1e-12
    fully_corrective: bool = False
    sketch_first: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        for name in ("power_iter_tol", "support_reopt_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer_iters < 0 or self.power_iter_max < 1 or self.support_reopt_max < 1:
            raise ValueError("iteration caps must be positive")


@dataclass
class FitReport:
    decomposition: AtomicDecomposition
    objective_trace: list
    certificate: tuple
    iterations: int
    wall_time: float
    converged: bool
    lam: float
    epsilon: float
    max_abs_entry: float = 0.0
    peak_atoms: int = 0
    n_atom_steps: int = 0
    n_reopt_steps: int = 0

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def summary(self) -> dict:
        """JSON-friendly summary without the decomposition."""
        return {
            "lam": self.lam,
            "epsilon": self.epsilon,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "certificate": {"g_min": self.certificate[0], "g_max_support": self.certificate[1]},
            "n_atoms": self.decomposition.n_atoms,
            "peak_atoms": self.peak_atoms,
            "atom_steps": self.n_atom_steps,
            "reopt_steps": self.n_reopt_steps,
            "max_abs_observed_entry": self.max_abs_entry,
            "wall_time": self.wall_time,
        }


def _is_zero(mat) -> bool:
    data = mat.data if sp.issparse(mat) else np.asarray(mat)
    return not np.any(data)


def _power_iteration(mat, v, tol, max_iter):
    matT = mat.T.tocsr() if sp.issparse(mat) else mat.T
    sigma = 0.0
    for _ in range(max_iter):
        u = mat @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return v, False
        v = matT @ (u / nu)
        new_sigma = np.linalg.norm(v)
        v /= new_sigma
        if abs(new_sigma - sigma) <= tol * new_sigma:
            return v, True
        sigma = new_sigma
    return v, False


def top_singular_pair(mat, tol: float = 1e-9, max_iter: int = 500, seed: int = 0,
                      v0: Optional[np.ndarray] = None, u0: Optional[np.ndarray] = None,
                      method: str = "lanczos"):
    """Leading singular triple ``(u, v, sigma)`` of a (sparse) matrix.

    ``method="lanczos"`` runs ARPACK on the smaller Gram matrix;
    ``method="power"`` runs power iteration on ``mat^T mat`` until the relative
    change of the singular value is below ``tol``, and falls back to ARPACK
    after ``max_iter`` iterations. Both only touch the stored nonzeros.
    ``v0``/``u0`` warm-start the iteration. On return ``u^T mat v = sigma >= 0``.
    A zero matrix gives ``sigma = 0`` with canonical unit vectors, which callers
    treat as "no improving atom".
    """
    m1, m2 = mat.shape
    if _is_zero(mat):
        e1, f1 = np.zeros(m1), np.zeros(m2)
        e1[0] = f1[0] = 1.0
        return e1, f1, 0.0
    rng = np.random.default_rng(seed)
    v = np.array(v0, dtype=float) if v0 is not None and np.any(v0) else rng.standard_normal(m2)
    v /= np.linalg.norm(v)
    done = False
    if method == "power":
        v, done = _power_iteration(mat, v, tol, max_iter)
    elif method != "lanczos":
        raise ValueError(f"unknown method {method!r}")
    if not done:
        if min(m1, m2) > 2:
            if m1 >= m2:
                start = v
            elif u0 is not None and np.any(u0):
                start = np.asarray(u0, dtype=float)
            else:
                start = rng.standard_normal(m1)
            _, _, vt = svds(mat, k=1, tol=tol, v0=start, maxiter=max(max_iter, 10 * min(m1, m2)))
            v = vt[0]
        else:
            dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
            v = np.linalg.svd(dense)[2][0]
    u = mat @ v
    sigma = float(np.linalg.norm(u))
    return u / sigma, v, sigma


def sketched_top_pair(mat, rng, v0: Optional[np.ndarray] = None, width: int = 8,
                      n_iter: int = 3):
    """Cheap approximate leading singular triple from a small randomized block Krylov sketch.

    The returned ``(u, v, sigma)`` always satisfies ``u^T mat v = sigma`` exactly,
    so ``sigma`` is a lower bound on the top singular value.
    """
    m2 = mat.shape[1]
    omega = rng.standard_normal((m2, width))
    if v0 is not None and np.any(v0):
        omega[:, 0] = v0
    matT = mat.T.tocsr() if sp.issparse(mat) else mat.T
    Q = np.linalg.qr(mat @ omega)[0]
    for _ in range(n_iter):
        Q = np.linalg.qr(mat @ np.linalg.qr(matT @ Q)[0])[0]
    B = np.asarray(matT @ Q).T
    v = np.linalg.svd(B, full_matrices=False)[2][0]
    u = mat @ v
    sigma = float(np.linalg.norm(u))
    if sigma == 0.0:
        return None
    return u / sigma, v, sigma


class _LiftedState:
    """Atoms of one slice plus their values at the observed entries.

    ``A[:, k]`` caches ``u_k[rows] * v_k[cols]`` so that ``W`` at the observed
    entries is ``A @ w``.
    """

    def __init__(self, problem: SliceProblem, init: Optional[AtomicDecomposition]):
        m1, m2 = problem.shape
        self.problem = problem
        r = init.n_atoms if init is not None else 0
        cap = max(8, 2 * r)
        self.U = np.zeros((m1, cap))
        self.V = np.zeros((m2, cap))
        self.A = np.zeros((problem.n_entries, cap))
        self.w = np.zeros(cap)
        self.r = 0
        if r:
            for k in range(r):
                self.append(init.left[:, k], init.right[:, k], init.weights[k])

    def _grow(self):
        cap = 2 * self.U.shape[1]
        for name in ("U", "V", "A"):
            old = getattr(self, name)
            new = np.zeros((old.shape[0], cap))
            new[:, :self.r] = old[:, :self.r]
            setattr(self, name, new)
        w = np.zeros(cap)
        w[:self.r] = self.w[:self.r]
        self.w = w

    def entry_column(self, u, v) -> np.ndarray:
        return u[self.problem.rows] * v[self.problem.cols]

    def append(self, u, v, weight, column=None):
        if self.r == self.U.shape[1]:
            self._grow()
        k = self.r
        self.U[:, k] = u
        self.V[:, k] = v
        self.A[:, k] = self.entry_column(u, v) if column is None else column
        self.w[k] = weight
        self.r += 1

    @property
    def weights(self) -> np.ndarray:
        return self.w[:self.r]

    @property
    def columns(self) -> np.ndarray:
        return self.A[:, :self.r]

    def values(self) -> np.ndarray:
        return self.columns @ self.weights

    def set_weights(self, w):
        self.w[:self.r] = w

    def prune(self, tol):
        keep = np.flatnonzero(self.weights > tol)
        if keep.size == self.r:
            return
        for name in ("U", "V", "A"):
            arr = getattr(self, name)
            arr[:, :keep.size] = arr[:, keep]
        self.w[:keep.size] = self.w[keep]
        self.r = keep.size

    def decomposition(self) -> AtomicDecomposition:
        return AtomicDecomposition(self.U[:, :self.r].copy(), self.V[:, :self.r].copy(),
                                   self.weights.copy())


def _line_search(problem: SliceProblem, lam: float, x: np.ndarray, a: np.ndarray,
                 slope0: float, tol: float = 1e-10, max_iter: int = 100) -> float:
    """Minimize ``b -> lam * b + Psi(x + b a)`` over ``b >= 0`` given its slope at 0 is negative.

    Safeguarded Newton on the derivative inside a bracket, falling back to
    bisection when the Newton step leaves the bracket.
    """
    def derivs(b):
        g, h = problem.directional(x + b * a, a)
        return lam + g, h

    lo, hi = 0.0, None
    _, c = derivs(0.0)
    b = -slope0 / c if c > 0 else 1.0
    for _ in range(200):
        d, c = derivs(b)
        if d > 0:
            hi = b
            break
        lo = b
        if abs(d) <= tol:
            return b
        b *= 2.0
    if hi is None:
        raise NumericalError("line search failed to bracket the minimizer")
    for _ in range(max_iter):
        if abs(d) <= tol or hi - lo <= 1e-14 * hi:
            break
        nb = b - d / c if c > 0 else 0.5 * (lo + hi)
        b = nb if lo < nb < hi else 0.5 * (lo + hi)
        d, c = derivs(b)
        if d > 0:
            hi = b
        else:
            lo = b
    return b


def reoptimize_support(problem: SliceProblem, columns: np.ndarray, lam: float,
                       start_weights: np.ndarray, tol: float = 1e-8, max_iter: int = 200):
    """Minimize the lifted objective over nonnegative weights on a fixed set of atoms.

    ``columns[:, k]`` holds atom ``k`` at the observed entries. Uses L-BFGS-B
    with bounds ``w >= 0``. Returns ``(weights, converged)``; the result never
    has a larger objective than ``start_weights``.
    """
    start = np.maximum(np.asarray(start_weights, dtype=float), 0.0)

    def fun(w):
        x = columns @ w
        g = problem.entry_gradient(x)
        return lam * w.sum() + problem.objective(x), lam + columns.T @ g

    f0, _ = fun(start)
    res = optimize.minimize(fun, start, jac=True, method="L-BFGS-B",
                            bounds=[(0.0, None)] * start.size,
                            options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15,
                                     "maxcor": 20})
    w = np.maximum(res.x, 0.0)
    f1, grad = fun(w)
    if not f1 <= f0:
        return start, False
    # projected-gradient optimality: grad >= -tol everywhere, |grad| <= tol where w > 0
    pg = np.where(w > 0, np.abs(grad), np.maximum(-grad, 0.0))
    return w, bool(pg.max(initial=0.0) <= tol)


def solve_slice(problem: SliceProblem, config: SolverConfig,
                init: Optional[AtomicDecomposition] = None) -> FitReport:
    """Minimize ``Psi(X) + lam * ||X||_*`` for one slice.

    Stops when the top singular value of ``-grad Psi`` is at most
    ``lam + epsilon/2`` and every support atom satisfies
    ``|lam + <grad Psi, u v^T>| <= epsilon``, or after ``max_outer_iters``
    outer steps (``converged=False``). ``init`` warm-starts the weights.
    """
    t0 = time.perf_counter()
    lam = config.lam
    eps = config.epsilon if config.epsilon is not None else 1e-4 * problem.value_at_zero()
    if init is not None and init.shape != problem.shape:
        raise ValueError("warm start has the wrong shape")
    state = _LiftedState(problem, init)
    x = state.values()
    obj = lam * state.weights.sum() + problem.objective(x)
    if not (np.isfinite(obj) and np.isfinite(eps)):
        raise NumericalError("objective is not finite at the starting point")
    trace = [obj]
    u_prev = v_prev = None
    sketch_rng = np.random.default_rng(config.seed)
    converged = False
    g_min, g_max = np.nan, np.nan
    peak = state.r
    n_atom = n_reopt = 0
    it = 0
    for it in range(config.max_outer_iters + 1):
        grad_entries = problem.entry_gradient(x)
        G = problem.as_matrix(-grad_entries)
        sketch = sketched_top_pair(G, sketch_rng, v_prev) if config.sketch_first else None
        if sketch is not None and lam - sketch[2] <= -eps / 2:
            # a sketched atom already gives descent; exact pairs are only needed to stop
            u, v, sigma = sketch
        else:
            u, v, sigma = top_singular_pair(G, config.power_iter_tol, config.power_iter_max,
                                            config.seed, v0=v_prev, u0=u_prev,
                                            method=config.singular_method)
        u_prev, v_prev = u, v
        g_min = lam - sigma
        if g_min <= -eps / 2:
            if it == config.max_outer_iters:
                break
            a = state.entry_column(u, v)
            beta = _line_search(problem, lam, x, a, g_min)
            state.append(u, v, beta, column=a)
            x = x + beta * a
            n_atom += 1
            if config.fully_corrective and state.r > 1:
                w, _ = reoptimize_support(problem, state.columns, lam, state.weights,
                                          config.support_reopt_tol, config.support_reopt_max)
                state.set_weights(w)
                state.prune(config.prune_tol)
                x = state.values()
        else:
            atom_g = lam + state.columns.T @ grad_entries
            g_max = float(np.abs(atom_g).max(initial=0.0))
            if g_max <= eps:
                converged = True
                break
            if it == config.max_outer_iters:
                break
            w, _ = reoptimize_support(problem, state.columns, lam, state.weights,
                                      config.support_reopt_tol, config.support_reopt_max)
            state.set_weights(w)
            state.prune(config.prune_tol)
            x = state.values()
            n_reopt += 1
        peak = max(peak, state.r)
        new_obj = lam * state.weights.sum() + problem.objective(x)
        if not np.isfinite(new_obj):
            raise NumericalError(f"objective became non-finite at iteration {it}")
        if new_obj > obj + 1e-9 * max(1.0, abs(obj)):
            logger.warning("objective increased from %.12g to %.12g", obj, new_obj)
        obj = new_obj
        trace.append(obj)
    else:
        it = config.max_outer_iters
    if not np.isfinite(g_max) or not converged:
        atom_g = lam + state.columns.T @ problem.entry_gradient(x)
        g_max = float(np.abs(atom_g).max(initial=0.0))
    return FitReport(
        decomposition=state.decomposition(),
        objective_trace=trace,
        certificate=(float(g_min), g_max),
        iterations=it,
        wall_time=time.perf_counter() - t0,
        converged=converged,
        lam=lam,
        epsilon=eps,
        max_abs_entry=float(np.abs(x).max(initial=0.0)),
        peak_atoms=peak,
        n_atom_steps=n_atom,
        n_reopt_steps=n_reopt,
    )


def solve_tensor(obs: ObservationSet, link: ConditionalLogitLink, config: SolverConfig,
                 inits: Optional[Sequence[Optional[AtomicDecomposition]]] = None,
                 threads: int = 1) -> list[FitReport]:
    """Solve the ``K - 1`` independent slice problems; reports are in slice order."""
    if link.n_classes != obs.n_classes:
        raise ValueError("link and observations disagree on the number of classes")
    q = link.n_slices
    inits = list(inits) if inits is not None else [None] * q

    def job(l):
        return solve_slice(SliceProblem.multinomial(obs, l, link), config, inits[l - 1])

    if threads > 1 and q > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, range(1, q + 1)))
    return [job(l) for l in range(1, q + 1)]


def reports_to_tensor(reports: Sequence[FitReport]) -> ParameterTensor:
    return ParameterTensor(np.stack([reconstruct(r.decomposition) for r in reports]))
