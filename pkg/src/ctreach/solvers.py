"""Trajectory evaluation: closed-form exponential sums, uniformisation, oracle.

``triangular_expsum`` solves dXbar/dt = Abar Xbar for quasi-upper-triangular
stable Abar in closed form by bottom-up back-substitution.  Internally the real
quasi-triangular form is mapped to a complex upper-triangular one (2x2 blocks
diagonalise within the block), the classic coefficient recursion runs in
complex arithmetic with a confluent polynomial branch for (near-)repeated
eigenvalues, and conjugate terms are folded back into real
``t^l e^{at}{1, cos bt, sin bt}`` terms.

``uniformization_solve`` is the adaptive-stepping baseline: per step the matrix
exponential acts through a Poisson-weighted power series truncated at
``max_terms`` terms, with the step length chosen so the summed discarded tail
mass stays within ``trunc_tol``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import CtreachError
from .models import ReachabilitySystem
from .reduction import ReducedSystem

__all__ = [
    "ExpSum",
    "ExpTerm",
    "ReachInterval",
    "SolveResult",
    "UniformizationResult",
    "default_grid",
    "eval_expsum",
    "eval_expsum_grid",
    "expsum_action",
    "oracle_expm",
    "reach_probability",
    "solve_reduced",
    "triangular_expsum",
    "uniformization_solve",
]


@dataclass(frozen=True)
class ExpTerm:
    """One term poly(t) * e^{a t} * {1 | cos(b t) | sin(b t)}."""

    kind: str  # "exp" | "cos" | "sin"
    a: float
    b: float
    coeffs: tuple[float, ...]  # poly coefficients for t^0 .. t^deg


@dataclass(frozen=True)
class ExpSum:
    """Closed-form solution: per state variable, a list of exponential terms."""

    terms: tuple[tuple[ExpTerm, ...], ...]

    @property
    def r(self) -> int:
        return len(self.terms)


def _complex_triangular(a_bar: np.ndarray):
    """Block-diagonal similarity to a complex upper-triangular system.

    Returns (t_mat, lam, y, yinv): T = Yinv Abar Y with T upper triangular,
    lam its diagonal; 2x2 real blocks diagonalise within the block.
    """
    r = a_bar.shape[0]
    starts = _block_split(a_bar)
    y = np.zeros((r, r), dtype=complex)
    yinv = np.zeros((r, r), dtype=complex)
    lam = np.zeros(r, dtype=complex)
    for s in starts:
        if s + 1 < r and a_bar[s + 1, s] != 0.0:
            blk = a_bar[s : s + 2, s : s + 2]
            tr = 0.5 * (blk[0, 0] + blk[1, 1])
            disc = (blk[0, 0] * blk[1, 1] - blk[0, 1] * blk[1, 0]) - tr * tr
            if disc <= 0:
                raise CtreachError(
                    "invalid-input", "2x2 diagonal block without complex pair"
                )
            b = math.sqrt(disc)
            lam[s] = complex(tr, b)
            lam[s + 1] = complex(tr, -b)
            if abs(blk[0, 1]) >= abs(blk[1, 0]):
                v = np.array([blk[0, 1], complex(tr, b) - blk[0, 0]], dtype=complex)
            else:
                v = np.array([complex(tr, b) - blk[1, 1], blk[1, 0]], dtype=complex)
            yb = np.column_stack([v, v.conjugate()])
            y[s : s + 2, s : s + 2] = yb
            yinv[s : s + 2, s : s + 2] = np.linalg.inv(yb)
        else:
            lam[s] = complex(a_bar[s, s], 0.0)
            y[s, s] = 1.0
            yinv[s, s] = 1.0
    t_mat = yinv @ a_bar.astype(complex) @ y
    return t_mat, lam, y, yinv


def expsum_action(a_bar: np.ndarray, x_bar0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Closed-form trajectory values (r x n_times) via the coefficient matrix.

    Same mathematics as :func:`triangular_expsum` but vectorised for large
    systems with pairwise-distinct eigenvalues: the upper-triangular
    coefficient matrix ``alpha`` is assembled bottom-up row by row and
    evaluated as ``Y (alpha exp(lam t))``.  Falls back to the term-building
    path when eigenvalues (near-)coincide.
    """
    a_bar = np.asarray(a_bar, dtype=float)
    x_bar0 = np.asarray(x_bar0, dtype=float)
    times = np.asarray(times, dtype=float)
    r = a_bar.shape[0]
    if r == 0:
        return np.zeros((0, len(times)))
    scale = max(1.0, float(np.abs(a_bar).max()))
    t_mat, lam, y, yinv = _complex_triangular(a_bar)
    if np.any(lam.real >= 0):
        raise CtreachError("invalid-input", "matrix is not stable")
    delta = 1e-9 * scale
    gaps = np.abs(lam[:, None] - lam[None, :]) + np.eye(r)
    if float(gaps.min()) < delta:
        es = triangular_expsum(a_bar, x_bar0)
        return eval_expsum_grid(es, times)
    z0 = yinv @ x_bar0.astype(complex)
    alpha = np.zeros((r, r), dtype=complex)
    alpha[r - 1, r - 1] = z0[r - 1]
    for i in range(r - 2, -1, -1):
        numer = t_mat[i, i + 1 :] @ alpha[i + 1 :, :]
        denom = lam - lam[i]
        denom[i] = 1.0
        row = numer / denom
        row[: i + 1] = 0.0
        row[i] = z0[i] - row.sum()
        alpha[i] = row
    vals = y @ (alpha @ np.exp(np.outer(lam, times)))
    return vals.real
    m = a_bar.shape[0]
    starts = []
    i = 0
    while i < m:
        starts.append(i)
        if i + 1 < m and a_bar[i + 1, i] != 0.0:
            i += 2
        else:
            i += 1
    return starts


def triangular_expsum(a_bar: np.ndarray, x_bar0: np.ndarray) -> ExpSum:
    """Closed-form exponential-sum solution of a stable quasi-triangular system.

    Eigenvalues closer than ``1e-9 * max(1, ||Abar||_max)`` are treated as
    confluent and produce polynomial-in-t coefficients; 2x2 Schur blocks yield
    e^{at} cos(bt) / e^{at} sin(bt) terms.  The evaluation at t = 0 reproduces
    ``x_bar0`` (verified).
    """
    a_bar = np.asarray(a_bar, dtype=float)
    x_bar0 = np.asarray(x_bar0, dtype=float)
    r = a_bar.shape[0]
    scale = max(1.0, float(np.abs(a_bar).max()) if a_bar.size else 1.0)
    if float(np.abs(np.tril(a_bar, -2)).max() if r > 2 else 0.0) > 0.0:
        raise CtreachError("invalid-input", "matrix is not quasi-upper-triangular")

    t_mat, lam, y, yinv = _complex_triangular(a_bar)
    if np.any(lam.real >= 0):
        raise CtreachError("invalid-input", "matrix is not stable")
    z0 = yinv @ x_bar0.astype(complex)

    # confluence groups over the complex diagonal
    delta = 1e-9 * scale
    group_of = np.full(r, -1, dtype=int)
    reps: list[complex] = []
    for i in range(r):
        for g, rep in enumerate(reps):
            if abs(lam[i] - rep) < delta:
                group_of[i] = g
                break
        else:
            group_of[i] = len(reps)
            reps.append(lam[i])

    # bottom-up recursion; per variable: {group: complex poly coeffs}
    sols: list[dict[int, np.ndarray]] = [dict() for _ in range(r)]
    for i in range(r - 1, -1, -1):
        gi = group_of[i]
        forcing: dict[int, np.ndarray] = {}
        for j in range(i + 1, r):
            tij = t_mat[i, j]
            if tij == 0:
                continue
            for g, poly in sols[j].items():
                acc = forcing.get(g)
                if acc is None:
                    forcing[g] = tij * poly
                else:
                    n = max(len(acc), len(poly))
                    out = np.zeros(n, dtype=complex)
                    out[: len(acc)] += acc
                    out[: len(poly)] += tij * poly
                    forcing[g] = out
        xi: dict[int, np.ndarray] = {gi: np.array([z0[i]], dtype=complex)}
        for g, q in forcing.items():
            if g == gi:
                quad = np.zeros(len(q) + 1, dtype=complex)
                quad[1:] = q / np.arange(1, len(q) + 1)
                _acc(xi, gi, quad)
            else:
                nu = reps[g] - reps[gi]
                p = np.zeros_like(q)
                p[-1] = q[-1] / nu
                for k in range(len(q) - 2, -1, -1):
                    p[k] = (q[k] - (k + 1) * p[k + 1]) / nu
                _acc(xi, g, p)
                _acc(xi, gi, np.array([-p[0]], dtype=complex))
        sols[i] = xi

    # back-transform X = Y Z and fold conjugate groups into real terms
    terms: list[tuple[ExpTerm, ...]] = []
    for i in range(r):
        combined: dict[int, np.ndarray] = {}
        for j in range(r):
            yij = y[i, j]
            if yij == 0:
                continue
            for g, poly in sols[j].items():
                acc = combined.get(g)
                if acc is None:
                    combined[g] = yij * poly
                else:
                    n = max(len(acc), len(poly))
                    out = np.zeros(n, dtype=complex)
                    out[: len(acc)] += acc
                    out[: len(poly)] += yij * poly
                    combined[g] = out
        terms.append(tuple(_fold_real(combined, reps, scale)))
    es = ExpSum(terms=tuple(terms))
    at0 = eval_expsum(es, 0.0)
    if float(np.abs(at0 - x_bar0).max()) > 1e-10 * max(1.0, float(np.abs(x_bar0).max())):
        raise CtreachError("internal-error", "expsum does not reproduce x_bar0 at t=0")
    return es


def _acc(store: dict[int, np.ndarray], g: int, poly: np.ndarray) -> None:
    acc = store.get(g)
    if acc is None:
        store[g] = poly.copy()
    else:
        n = max(len(acc), len(poly))
        out = np.zeros(n, dtype=complex)
        out[: len(acc)] += acc
        out[: len(poly)] += poly
        store[g] = out


def _fold_real(
    combined: dict[int, np.ndarray], reps: list[complex], scale: float
) -> list[ExpTerm]:
    bykey: dict[tuple[float, float], dict[int, np.ndarray]] = {}
    for g, poly in combined.items():
        rep = reps[g]
        key = (rep.real, abs(rep.imag))
        bykey.setdefault(key, {})[1 if rep.imag > 0 else (-1 if rep.imag < 0 else 0)] = poly
    out: list[ExpTerm] = []
    tol = 1e-8 * max(scale, 1.0)
    for (a, b), parts in sorted(bykey.items()):
        if b == 0.0:
            poly = parts.get(0, np.zeros(1, dtype=complex))
            if float(np.abs(poly.imag).max()) > tol:
                raise CtreachError("internal-error", "real term with imaginary residue")
            coeffs = poly.real
            if np.any(coeffs != 0):
                out.append(ExpTerm("exp", a, 0.0, tuple(coeffs)))
        else:
            p_pos = parts.get(1, np.zeros(1, dtype=complex))
            p_neg = parts.get(-1, np.zeros(1, dtype=complex))
            n = max(len(p_pos), len(p_neg))
            pp = np.zeros(n, dtype=complex)
            pm = np.zeros(n, dtype=complex)
            pp[: len(p_pos)] = p_pos
            pm[: len(p_neg)] = p_neg
            cos_c = (pp + pm).real
            sin_c = -(pp - pm).imag
            residue = max(
                float(np.abs((pp + pm).imag).max()), float(np.abs((pp - pm).real).max())
            )
            if residue > tol * max(1.0, float(np.abs(pp).max()) + float(np.abs(pm).max())):
                raise CtreachError("internal-error", "conjugate terms do not fold to real")
            if np.any(cos_c != 0):
                out.append(ExpTerm("cos", a, b, tuple(cos_c)))
            if np.any(sin_c != 0):
                out.append(ExpTerm("sin", a, b, tuple(sin_c)))
    return out


def eval_expsum(es: ExpSum, t: float) -> np.ndarray:
    """Evaluate all state variables of the sum at a single time t >= 0."""
    return eval_expsum_grid(es, np.array([float(t)]))[:, 0]


def eval_expsum_grid(es: ExpSum, times: np.ndarray) -> np.ndarray:
    """Vectorised evaluation over a time grid; returns (r, n_times)."""
    times = np.asarray(times, dtype=float)
    rows_var = []
    rows_a = []
    rows_b = []
    rows_kind = []
    rows_deg = []
    rows_coef = []
    for var, term_list in enumerate(es.terms):
        for term in term_list:
            for deg, c in enumerate(term.coeffs):
                if c == 0.0:
                    continue
                rows_var.append(var)
                rows_a.append(term.a)
                rows_b.append(term.b)
                rows_kind.append({"exp": 0, "cos": 1, "sin": 2}[term.kind])
                rows_deg.append(deg)
                rows_coef.append(c)
    out = np.zeros((es.r, len(times)))
    if not rows_var:
        return out
    var_i = np.array(rows_var)
    a_v = np.array(rows_a)
    b_v = np.array(rows_b)
    kind_v = np.array(rows_kind)
    deg_v = np.array(rows_deg, dtype=float)
    coef_v = np.array(rows_coef)
    chunk = max(1, int(4e6 // max(len(var_i), 1)))
    for lo in range(0, len(times), chunk):
        ts = times[lo : lo + chunk][None, :]
        base = coef_v[:, None] * np.power(ts, deg_v[:, None]) * np.exp(a_v[:, None] * ts)
        phase = b_v[:, None] * ts
        trig = np.where(
            kind_v[:, None] == 0, 1.0, np.where(kind_v[:, None] == 1, np.cos(phase), np.sin(phase))
        )
        np.add.at(out[:, lo : lo + chunk], var_i, base * trig)
    return out


# ---------------------------------------------------------------------------
# reachability values with certified intervals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReachInterval:
    """Clamped reachability values with certified [lower, upper] intervals."""

    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    raw: np.ndarray


def reach_probability(reduced: ReducedSystem, c_s: np.ndarray, t: float) -> ReachInterval:
    """Certified reachability value(s) at time t from the reduced system."""
    if t < 0:
        raise CtreachError("invalid-input", "time must be nonnegative")
    es = triangular_expsum(reduced.a_bar, reduced.x_bar0)
    xbar = eval_expsum(es, t)
    raw = reduced.offset_d + (c_s @ reduced.p) @ xbar
    eps = float(reduced.envelope.eval(t))
    lower = np.clip(raw - eps, 0.0, 1.0)
    upper = np.clip(raw + eps, 0.0, 1.0)
    return ReachInterval(values=np.clip(raw, 0.0, 1.0), lower=lower, upper=upper, raw=raw)


def default_grid(horizon: float, n_points: int = 200) -> np.ndarray:
    """Log-spaced sample grid over (0, horizon]."""
    if horizon <= 0:
        raise CtreachError("invalid-input", "horizon must be positive")
    return np.geomspace(horizon * 1e-3, horizon, n_points)


@dataclass(frozen=True)
class SolveResult:
    """Sampled reachability values with the certified envelope column."""

    times: np.ndarray
    probs: np.ndarray  # m0 x n_times, clamped to [0, 1]
    raw: np.ndarray
    envelope_at_t: np.ndarray
    target_rows: tuple[int, ...]

    def to_csv(self) -> str:
        header = "t," + ",".join(f"prob_{s}" for s in self.target_rows) + ",eps"
        lines = [header]
        for k, t in enumerate(self.times):
            vals = ",".join(f"{v:.12g}" for v in self.probs[:, k])
            lines.append(f"{t:.12g},{vals},{self.envelope_at_t[k]:.12g}")
        return "\n".join(lines) + "\n"


def solve_reduced(
    system: ReachabilitySystem, reduced: ReducedSystem, times: np.ndarray
) -> SolveResult:
    """Evaluate the reduced solution plus envelope on a time grid."""
    es = triangular_expsum(reduced.a_bar, reduced.x_bar0)
    xbar = eval_expsum_grid(es, times)
    raw = reduced.offset_d[:, None] + (system.c_s @ reduced.p) @ xbar
    eps = reduced.envelope.eval(times)
    return SolveResult(
        times=np.asarray(times, dtype=float),
        probs=np.clip(raw, 0.0, 1.0),
        raw=raw,
        envelope_at_t=np.asarray(eps, dtype=float),
        target_rows=system.target_rows,
    )


# ---------------------------------------------------------------------------
# uniformisation baseline and oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UniformizationResult:
    values: np.ndarray
    discarded_mass: float
    steps: int


def uniformization_solve(
    q: np.ndarray,
    good: int,
    s0: tuple[int, ...] | list[int],
    horizon: float,
    trunc_tol: float = 0.01,
    max_terms: int = 5,
    min_step: float = 1e-4,
) -> UniformizationResult:
    """Adaptive uniformisation baseline for Z(T) = e^{QT} 1(good).

    Each step applies a Poisson-weighted series of at most ``max_terms`` powers
    of H0 = Q/gamma + I; steps are sized so the total discarded Poisson tail
    mass stays below ``trunc_tol``.  Raises ``uniformization-step-underflow``
    when the required step falls below ``min_step``.
    """
    if horizon < 0:
        raise CtreachError("invalid-input", "time bound must be nonnegative")
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    v = np.zeros(n)
    v[good] = 1.0
    s0 = tuple(int(s) for s in s0)
    if horizon == 0:
        return UniformizationResult(values=v[list(s0)], discarded_mass=0.0, steps=0)
    gamma = float(np.abs(np.diag(q)).max())
    if gamma <= 0:
        return UniformizationResult(values=v[list(s0)], discarded_mass=0.0, steps=0)
    h0 = q / gamma + np.eye(n)

    budget_rate = trunc_tol / horizon

    def tail(x: float) -> float:
        # 1 - sum_{k < max_terms} e^{-x} x^k / k!
        acc = 0.0
        w = math.exp(-x)
        for k in range(max_terms):
            acc += w
            w *= x / (k + 1)
        return max(0.0, 1.0 - acc)

    def step_size(remaining: float) -> float:
        # largest h <= remaining with tail(gamma h) <= budget_rate * h
        hi = remaining
        if tail(gamma * hi) <= budget_rate * hi:
            return hi
        lo = 0.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if tail(gamma * mid) <= budget_rate * mid:
                lo = mid
            else:
                hi = mid
        return lo

    t_done = 0.0
    discarded = 0.0
    steps = 0
    while t_done < horizon * (1 - 1e-15):
        h = step_size(horizon - t_done)
        if h < min_step and horizon - t_done > min_step:
            raise CtreachError(
                "uniformization-step-underflow",
                f"required step {h:.3g} below minimum {min_step:g}",
            )
        x = gamma * h
        w = math.exp(-x)
        acc = w * v
        term = v
        covered = w
        for k in range(1, max_terms):
            term = h0 @ term
            w *= x / k
            acc = acc + w * term
            covered += w
        discarded += max(0.0, 1.0 - covered)
        v = acc
        t_done += h
        steps += 1
    return UniformizationResult(values=v[list(s0)], discarded_mass=discarded, steps=steps)


def oracle_expm(a: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
    """Independent verification oracle e^{A t} v (Pade scaling-and-squaring)."""
    out = sla.expm(np.asarray(a, dtype=float) * float(t)) @ np.asarray(v, dtype=float)
    if not np.all(np.isfinite(out)):
        raise CtreachError("oracle-overflow", "matrix exponential overflowed")
    return out
