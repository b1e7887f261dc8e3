"""Generalised projections, reduced systems, and the order-search scan.

The reduced system keeps an invariant subspace of A spanned by Schur blocks:
``P`` holds orthonormal Schur vectors, ``Abar`` the matching quasi-triangular
block, so ``A P = P Abar`` holds exactly.  Blocks are selected by the weighted
energy of their component in the translated initial state X(0) = A^{-1} beta
(descending), which retrieves exact lumpings (zero-participation blocks are
dropped first) and keeps the certified initial error small.  Within the
retained cluster blocks are arranged by ascending real part, so the last
reduced variable is the slowest pure exponential.

The order scan evaluates the certified envelope for every prefix of that block
order from one Schur factorisation plus one eigenvector basis; the chosen
prefix is then materialised by orthogonal block reordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import CtreachError
from .lyapunov import (
    Certificate,
    ErrorEnvelope,
    certificate_from_perron,
    envelope_from_initial_value,
    verify_lmi,
    xi_factor,
)
from .models import ReachabilitySystem, check_assumption1
from .spectral import (
    SchurFactors,
    perron_left_eigen,
    real_schur,
    reorder_selected,
    stability_margin,
)

__all__ = [
    "ReducedSystem",
    "LumpingPartition",
    "LumpedSystem",
    "initial_state",
    "lumping_projection",
    "mismatch",
    "project",
    "reduce_ctmc",
]


@dataclass(frozen=True)
class ReducedSystem:
    """Reduced dynamics dXbar/dt = Abar Xbar with certified envelope.

    ``beta_bar = Abar @ Xbar0`` by construction; ``c_bar = C_S P`` maps reduced
    states to the tracked outputs; ``offset_d`` is shared with the parent
    system.
    """

    a_bar: np.ndarray
    p: np.ndarray
    x_bar0: np.ndarray
    beta_bar: np.ndarray
    r: int
    envelope: ErrorEnvelope
    offset_d: np.ndarray
    c_bar: np.ndarray
    cert: Certificate

    @property
    def kappa(self) -> float:
        return self.envelope.kappa


def project(factors: SchurFactors, r_eff: int) -> tuple[np.ndarray, np.ndarray]:
    """Leading-block projection (Abar, P) from reordered Schur factors.

    ``r_eff`` must be a block boundary; the intertwining residual
    ``||A P - P Abar||_max`` is verified against 1e-9 * max(1, ||A||_max).
    """
    if r_eff not in factors.block_starts and r_eff != factors.m:
        raise CtreachError("invalid-input", f"r_eff={r_eff} splits a 2x2 block")
    p = factors.u[:, :r_eff].copy()
    a_bar = factors.n[:r_eff, :r_eff].copy()
    scale = max(1.0, float(np.abs(factors.a).max()))
    resid = float(np.abs(factors.a @ p - p @ a_bar).max())
    if resid > 1e-9 * scale:
        raise CtreachError(
            "schur-no-convergence", f"projection residual {resid:.3g} too large"
        )
    orth = float(np.abs(p.T @ p - np.eye(r_eff)).max())
    if orth > 1e-10:
        raise CtreachError("schur-no-convergence", f"P columns not orthonormal ({orth:.3g})")
    return a_bar, p


def initial_state(p: np.ndarray, m_weight: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Weighted least-squares initial state (P^T M P)^{-1} P^T M x0."""
    g = p.T @ m_weight @ p
    rhs = p.T @ (m_weight @ x0)
    c, low = sla.cho_factor(0.5 * (g + g.T))
    return sla.cho_solve((c, low), rhs)


def mismatch(system: ReachabilitySystem, reduced: ReducedSystem) -> np.ndarray:
    """Input mismatch Gamma = beta - P beta_bar (beta_bar = Abar Xbar0)."""
    return system.beta - reduced.p @ reduced.beta_bar


# ---------------------------------------------------------------------------
# participation blocks and the prefix scan
# ---------------------------------------------------------------------------

@dataclass
class _Block:
    eig: complex           # representative eigenvalue (Im >= 0)
    size: int
    component: np.ndarray | None  # real eigencomponent of x0 (None if degenerate)
    basis: np.ndarray      # real basis of the block's invariant subspace (m x size)


def _eigen_blocks(a: np.ndarray, x0: np.ndarray) -> list[_Block]:
    """Real per-block eigencomponents of x0 (weight-independent part).

    Falls back to component-free blocks when the eigenvector matrix is too
    ill-conditioned to split x0 reliably (selection then degrades to
    dominant-first ordering; soundness is unaffected).
    """
    m = a.shape[0]
    eigvals, vecs = sla.eig(a)
    try:
        coeffs = np.linalg.solve(vecs, x0.astype(complex))
        recon_err = float(np.abs(vecs @ coeffs - x0).max())
    except np.linalg.LinAlgError:
        coeffs = np.zeros(m, dtype=complex)
        recon_err = np.inf
    degenerate = recon_err > 1e-6 * max(1.0, float(np.abs(x0).max()))
    comp_mat = vecs * coeffs  # column i = coeffs[i] * vecs[:, i]

    blocks: list[_Block] = []
    imag_tol = 1e-9 * max(1.0, float(np.abs(eigvals).max()))
    order = np.lexsort((-eigvals.imag, eigvals.real))  # conjugates adjacent
    used = np.zeros(m, dtype=bool)
    pos = 0
    while pos < m:
        i = order[pos]
        lam = eigvals[i]
        if abs(lam.imag) <= imag_tol:
            blocks.append(
                _Block(
                    eig=complex(lam.real, 0.0),
                    size=1,
                    component=None if degenerate else comp_mat[:, i].real,
                    basis=vecs[:, i].real.reshape(m, 1),
                )
            )
            used[i] = True
            pos += 1
            continue
        j = order[pos + 1] if pos + 1 < m else None
        if j is None or abs(eigvals[j] - lam.conjugate()) > 1e-6 * max(1.0, abs(lam)):
            # unpaired complex eigenvalue (defective input); keep real span
            blocks.append(
                _Block(
                    eig=complex(lam.real, abs(lam.imag)),
                    size=2,
                    component=None,
                    basis=np.column_stack([vecs[:, i].real, vecs[:, i].imag]),
                )
            )
            pos += 1
            continue
        comp = None if degenerate else (comp_mat[:, i] + comp_mat[:, j]).real
        blocks.append(
            _Block(
                eig=complex(lam.real, abs(lam.imag)),
                size=2,
                component=comp,
                basis=np.column_stack([vecs[:, i].real, vecs[:, i].imag]),
            )
        )
        pos += 2
    return blocks


def _order_blocks(blocks: list[_Block], w_diag: np.ndarray) -> list[_Block]:
    """Sort by descending weighted x0-component energy (dominant-first backup)."""

    def key(blk: _Block):
        if blk.component is None:
            return (0.0, -blk.eig.real)
        return (-float(np.linalg.norm(w_diag * blk.component)), -blk.eig.real)

    return sorted(blocks, key=key)


class _PrefixScan:
    """Weighted residual ||W (x0 - proj_prefix x0)||_2 for every block prefix.

    One QR factorisation of the weighted basis; columns whose R diagonal is
    negligible are treated as dependent (their projections are excluded, which
    can only overestimate the residual).
    """

    def __init__(self, blocks: list[_Block], x0: np.ndarray, w_diag: np.ndarray):
        self.blocks = blocks
        y = w_diag * x0
        cols = np.column_stack([blk.basis for blk in blocks]) if blocks else np.zeros((len(y), 0))
        cols = w_diag[:, None] * cols
        norm_y = float(np.linalg.norm(y))
        floor = 1e-10 * (1.0 + norm_y)
        self.prefix_sizes: list[int] = []
        self.resids: list[float] = []
        if cols.shape[1] == 0:
            return
        q, r_mat = sla.qr(cols, mode="economic")
        col_norms = np.linalg.norm(cols, axis=0)
        live = np.abs(np.diag(r_mat)) > 1e-12 * np.maximum(col_norms, 1.0)
        proj = (q.T @ y) ** 2 * live
        cum = np.cumsum(proj)
        total = 0
        k = 0
        for blk in blocks:
            total += blk.size
            k += blk.basis.shape[1]
            resid_sq = norm_y**2 - float(cum[k - 1])
            resid = math.sqrt(max(resid_sq, 0.0))
            self.prefix_sizes.append(total)
            self.resids.append(0.0 if resid <= floor else resid)


def _identity_certificate(system: ReachabilitySystem) -> Certificate | None:
    """Identity-weight certificate at the symmetric-part margin, if feasible."""
    sym = 0.5 * (system.a + system.a.T)
    kappa = -float(sla.eigvalsh(sym)[-1])
    if kappa <= 0.0:
        return None
    ident = np.eye(system.m)
    res = verify_lmi(system.a, ident, kappa, system.c_s)
    if not res.feasible:
        return None
    return Certificate(m_weight=ident, kappa=kappa)


def _certificate_candidates(
    system: ReachabilitySystem, which: str = "auto"
) -> list[Certificate]:
    """Constructive certificates to try: Perron-diagonal and identity weight.

    The Perron certificate needs Assumption 1; the identity weight needs a
    negative-definite symmetric part (its kappa is that margin).  A stable but
    reducible system without an identity certificate cannot be handled by the
    constructive toolbox and raises ``assumption-violated``.
    """
    if which not in ("auto", "perron", "identity"):
        raise CtreachError("invalid-input", f"unknown certificate choice {which!r}")
    candidates: list[Certificate] = []
    if which in ("auto", "perron") and check_assumption1(system).holds:
        perron = perron_left_eigen(system.h, system.gamma_unif)
        candidates.append(certificate_from_perron(system, perron, target_scaled=True))
    if which in ("auto", "identity"):
        ident = _identity_certificate(system)
        if ident is not None:
            candidates.append(ident)
    if not candidates:
        margin = stability_margin(system.a)
        if margin >= 0.0:
            raise CtreachError("assumption-violated", "A is not stable")
        raise CtreachError(
            "assumption-violated",
            "H is reducible and the identity-weight fallback certificate is "
            "infeasible; run prune_reducible first or provide an irreducible model",
        )
    return candidates


def reduce_ctmc(
    system: ReachabilitySystem,
    horizon: float,
    eps_max: float,
    r: int | None = None,
    certificate: str = "auto",
) -> ReducedSystem:
    """Smallest-order certified reduction meeting ``eps_max`` at the horizon.

    Scans prefixes of the participation-ordered Schur blocks (one factorisation,
    one reordering pass) and returns the smallest effective order whose
    certified envelope at ``horizon`` is at most ``eps_max``; the full order
    always qualifies (its mismatch vanishes).  With ``r`` given, the scan is
    skipped and the smallest block boundary >= r is materialised.
    ``certificate`` picks the Lyapunov weight family: ``"perron"`` (diagonal,
    Theorem-style), ``"identity"``, or ``"auto"`` (try both, keep the smaller
    order / tighter envelope).
    """
    a = system.a
    m = system.m
    x0 = system.x0()
    if r is not None and not (1 <= r <= m):
        raise CtreachError("invalid-input", f"r={r} out of range 1..{m}")

    raw_blocks = _eigen_blocks(a, x0)
    best: tuple[int, float, Certificate, list[_Block], int] | None = None
    for cert in _certificate_candidates(system, certificate):
        w_diag = np.sqrt(np.diag(cert.m_weight))
        blocks = _order_blocks(raw_blocks, w_diag)
        scan = _PrefixScan(blocks, x0, w_diag)
        chosen = len(blocks)
        env_at_t = 0.0
        if r is not None:
            for k, size in enumerate(scan.prefix_sizes):
                if size >= r:
                    chosen = k + 1
                    break
            env_at_t = scan.resids[chosen - 1] * math.exp(-cert.kappa * horizon)
            size = scan.prefix_sizes[chosen - 1]
        else:
            decay = math.exp(-cert.kappa * horizon)
            size = m
            for k, resid in enumerate(scan.resids):
                if resid * decay <= eps_max:
                    chosen = k + 1
                    env_at_t = resid * decay
                    size = scan.prefix_sizes[k]
                    break
        # prefer the smaller order; on ties the tighter envelope at the horizon
        if best is None or (size, env_at_t) < (best[0], best[1]):
            best = (size, env_at_t, cert, blocks, chosen)

    _, _, cert, blocks, chosen = best
    factors = real_schur(a)
    if chosen >= len(blocks):
        reordered, r_eff = factors, m  # full order: any block order is exact
    else:
        selected = [blk.eig for blk in blocks[:chosen]]
        reordered, r_eff = reorder_selected(factors, selected)
    a_bar, p = project(reordered, r_eff)

    x_bar0 = initial_state(p, cert.m_weight, x0)
    beta_bar = a_bar @ x_bar0
    residual = x0 - p @ x_bar0
    gamma_mismatch = system.beta - p @ beta_bar
    coeff_gamma = xi_factor(a, cert.m_weight) * float(np.linalg.norm(gamma_mismatch))
    env = envelope_from_initial_value(cert, residual, coeff_gamma=coeff_gamma)
    return ReducedSystem(
        a_bar=a_bar,
        p=p,
        x_bar0=x_bar0,
        beta_bar=beta_bar,
        r=r_eff,
        envelope=env,
        offset_d=system.offset_d,
        c_bar=system.c_s @ p,
        cert=cert,
    )


# ---------------------------------------------------------------------------
# exact lumping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LumpingPartition:
    """Disjoint blocks of transient-state positions covering 0..m-1."""

    blocks: tuple[tuple[int, ...], ...]

    def validate(self, m: int) -> None:
        seen: set[int] = set()
        for blk in self.blocks:
            for s in blk:
                if not (0 <= s < m) or s in seen:
                    raise CtreachError("invalid-input", f"partition reuses or misses state {s}")
                seen.add(s)
        if len(seen) != m:
            raise CtreachError("invalid-input", "partition does not cover all states")


@dataclass(frozen=True)
class LumpedSystem:
    p_lump: np.ndarray
    a_bar: np.ndarray
    beta_bar: np.ndarray


def lumping_projection(
    partition: LumpingPartition, system: ReachabilitySystem, tol: float = 1e-12
) -> LumpedSystem:
    """0/1 membership projection for an exact lumping, or ``not-a-bisimulation``.

    Verifies that A @ P_lump, beta (and chi, when present) are row-constant
    within every block; on success the lumped pair satisfies
    ``A P = P Abar`` and ``beta = P beta_bar`` so X(t) = P Xbar(t) exactly.
    """
    partition.validate(system.m)
    m = system.m
    k = len(partition.blocks)
    p_lump = np.zeros((m, k))
    for b, blk in enumerate(partition.blocks):
        for s in blk:
            p_lump[s, b] = 1.0
    ap = system.a @ p_lump
    scale = max(1.0, float(np.abs(system.a).max()))
    for b, blk in enumerate(partition.blocks):
        ref = blk[0]
        for s in blk[1:]:
            row_gap = float(np.abs(ap[s] - ap[ref]).max())
            if row_gap > tol * scale:
                raise CtreachError(
                    "not-a-bisimulation",
                    f"block {b}: states {ref} and {s} disagree on lumped rates "
                    f"(gap {row_gap:.3g})",
                )
            if abs(system.beta[s] - system.beta[ref]) > tol * scale:
                raise CtreachError(
                    "not-a-bisimulation",
                    f"block {b}: states {ref} and {s} disagree on rates into good",
                )
            if abs(system.chi[s] - system.chi[ref]) > tol * scale:
                raise CtreachError(
                    "not-a-bisimulation",
                    f"block {b}: states {ref} and {s} disagree on rates into bad",
                )
    reps = [blk[0] for blk in partition.blocks]
    a_bar = ap[reps, :]
    beta_bar = system.beta[reps]
    return LumpedSystem(p_lump=p_lump, a_bar=a_bar, beta_bar=beta_bar)
