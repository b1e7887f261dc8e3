"""Real Schur factorisation, block reordering, and Perron eigен-data.

The real Schur form ``A = U N U^T`` (orthonormal ``U``, quasi-upper-triangular
``N`` with 1x1 and 2x2 diagonal blocks) is the workhorse behind all reductions:
its leading ``r`` columns span an invariant subspace, so ``A P = P Abar`` holds
exactly for ``P = U[:, :r]`` and ``Abar = N[:r, :r]`` at any block boundary.
Reordering moves chosen eigenvalue blocks into the leading position via
orthogonal similarity (LAPACK ``dtrsen``/``dtrexc``), with the reconstruction
residual re-checked after every reordering pass.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import CtreachError

__all__ = [
    "SchurFactors",
    "PerronData",
    "real_schur",
    "reorder_dominant",
    "reorder_selected",
    "perron_left_eigen",
    "stability_margin",
]

_RESIDUAL_TOL = 1e-8      # reconstruction tolerance, relative to max(1, ||A||_max)
_SWAP_ABORT_TOL = 1e-6    # residual blow-up threshold after reordering


@dataclass(frozen=True)
class SchurFactors:
    """Real Schur factors ``A = U N U^T`` plus block metadata.

    ``eigs`` lists the eigenvalues in diagonal-block order (conjugate pairs are
    adjacent); ``block_starts`` gives the leading index of each 1x1/2x2 block.
    ``a`` keeps the source matrix for residual re-checks.
    """

    a: np.ndarray
    u: np.ndarray
    n: np.ndarray
    eigs: tuple[complex, ...]
    block_starts: tuple[int, ...]

    @property
    def m(self) -> int:
        return self.n.shape[0]

    def block_sizes(self) -> tuple[int, ...]:
        starts = list(self.block_starts) + [self.m]
        return tuple(b - a for a, b in zip(starts, starts[1:]))

    def block_eigs(self) -> tuple[complex, ...]:
        """One representative eigenvalue per block (positive imaginary part)."""
        out = []
        for s, width in zip(self.block_starts, self.block_sizes()):
            lam = self.eigs[s]
            out.append(complex(lam.real, abs(lam.imag)) if width == 2 else lam)
        return tuple(out)

    def valid_cut(self, r: int) -> int:
        """Smallest block boundary >= r (so 2x2 blocks are never split)."""
        for s in self.block_starts:
            if s >= r:
                return s
        return self.m


def _block_structure(n_mat: np.ndarray) -> tuple[tuple[int, ...], tuple[complex, ...]]:
    m = n_mat.shape[0]
    starts = []
    eigs: list[complex] = []
    i = 0
    while i < m:
        starts.append(i)
        if i + 1 < m and n_mat[i + 1, i] != 0.0:
            blk = n_mat[i : i + 2, i : i + 2]
            tr = 0.5 * (blk[0, 0] + blk[1, 1])
            det = blk[0, 0] * blk[1, 1] - blk[0, 1] * blk[1, 0]
            disc = det - tr * tr
            im = np.sqrt(max(disc, 0.0))
            eigs.extend([complex(tr, im), complex(tr, -im)])
            i += 2
        else:
            eigs.append(complex(n_mat[i, i], 0.0))
            i += 1
    return tuple(starts), tuple(eigs)


def _clean_lower(n_mat: np.ndarray) -> np.ndarray:
    """Zero everything strictly below the quasi-triangular block diagonal."""
    m = n_mat.shape[0]
    out = np.triu(n_mat, k=-1)
    i = 0
    while i < m:
        if i + 1 < m and n_mat[i + 1, i] != 0.0:
            i += 2
        else:
            if i + 1 < m:
                out[i + 1, i] = 0.0
            i += 1
    return out


def _verify(a, u, n_mat, tol_scale: float) -> float:
    scale = max(1.0, float(np.abs(a).max()))
    resid = float(np.abs(a - u @ n_mat @ u.T).max())
    orth = float(np.abs(u.T @ u - np.eye(u.shape[0])).max())
    if resid > tol_scale * scale or orth > 1e-10:
        raise CtreachError(
            "schur-no-convergence",
            f"Schur residual {resid:.3g} (orthogonality {orth:.3g}) exceeds tolerance",
        )
    return resid


def real_schur(a: np.ndarray) -> SchurFactors:
    """Real Schur factorisation with verified invariants.

    Raises ``schur-no-convergence`` if the QR iteration fails or the factors do
    not reconstruct ``A`` to ``1e-8 * max(1, ||A||_max)``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise CtreachError("invalid-input", "real_schur expects a square matrix")
    if not np.all(np.isfinite(a)):
        raise CtreachError("invalid-input", "real_schur expects finite entries")
    try:
        n_mat, u = sla.schur(a, output="real")
    except sla.LinAlgError as exc:  # pragma: no cover - LAPACK rarely fails
        raise CtreachError("schur-no-convergence", str(exc)) from None
    n_mat = _clean_lower(n_mat)
    starts, eigs = _block_structure(n_mat)
    factors = SchurFactors(a=a, u=u, n=n_mat, eigs=eigs, block_starts=starts)
    _verify(a, u, n_mat, _RESIDUAL_TOL)
    return factors


def _trsen_select(factors: SchurFactors, mask: np.ndarray) -> SchurFactors:
    """Move the blocks flagged in the per-position mask to the leading block."""
    m = factors.m
    ts, qs, _, _, _, _, _, info = lapack.dtrsen(
        mask.astype(np.int32),
        factors.n,
        factors.u,
        job="N",
        wantq=1,
        lwork=max(1, m * m),
        liwork=max(1, m * m),
    )
    if info != 0:
        raise CtreachError("schur-no-convergence", f"dtrsen failed with info={info}")
    ts = _clean_lower(ts)
    starts, eigs = _block_structure(ts)
    out = replace(factors, u=qs, n=ts, eigs=eigs, block_starts=starts)
    _verify(out.a, out.u, out.n, _SWAP_ABORT_TOL)
    return out


def _trexc_move(factors: SchurFactors, ifst: int, ilst: int) -> SchurFactors:
    """Move the block starting at 0-based row ifst to row ilst (LAPACK dtrexc)."""
    t = np.asfortranarray(factors.n.copy())
    q = np.asfortranarray(factors.u.copy())
    t, q, info = lapack.dtrexc(t, q, ifst + 1, ilst + 1, wantq=1)
    if info != 0:
        raise CtreachError("schur-no-convergence", f"dtrexc failed with info={info}")
    t = _clean_lower(np.ascontiguousarray(t))
    starts, eigs = _block_structure(t)
    out = replace(factors, u=np.ascontiguousarray(q), n=t, eigs=eigs, block_starts=starts)
    _verify(out.a, out.u, out.n, _SWAP_ABORT_TOL)
    return out


def _match_blocks(factors: SchurFactors, wanted: list[complex]) -> np.ndarray:
    """Per-position selection mask for the blocks whose eigenvalues match `wanted`.

    Matching is greedy nearest-neighbour in the complex plane; every wanted
    eigenvalue must match a distinct block.
    """
    block_eigs = list(factors.block_eigs())
    starts = factors.block_starts
    sizes = factors.block_sizes()
    scale = max(1.0, max(abs(e) for e in block_eigs))
    taken = [False] * len(block_eigs)
    mask = np.zeros(factors.m, dtype=bool)
    for w in wanted:
        w = complex(w.real, abs(w.imag))
        best, best_d = None, None
        for k, e in enumerate(block_eigs):
            if taken[k]:
                continue
            d = abs(e - w)
            if best_d is None or d < best_d:
                best, best_d = k, d
        if best is None or best_d > 1e-6 * scale:
            raise CtreachError(
                "schur-no-convergence",
                f"cannot locate eigenvalue {w:.6g} among Schur blocks",
            )
        taken[best] = True
        mask[starts[best] : starts[best] + sizes[best]] = True
    return mask


def reorder_selected(
    factors: SchurFactors,
    selected: list[complex],
    ascending_real_within: bool = True,
) -> tuple[SchurFactors, int]:
    """Move the blocks with the given eigenvalues to the front.

    The retained blocks are arranged among themselves by ascending real part
    (fastest mode first) so the last reduced variable is the slowest pure
    exponential.  Returns the reordered factors and the total size r_eff of the
    leading cluster.
    """
    mask = _match_blocks(factors, list(selected))
    r_eff = int(mask.sum())
    out = _trsen_select(factors, mask)
    if ascending_real_within:
        out = _sort_leading(out, r_eff)
    return out, r_eff


def _sort_leading(factors: SchurFactors, r_eff: int) -> SchurFactors:
    """Selection-sort the leading blocks by ascending real part via dtrexc."""
    pos = 0
    while pos < r_eff:
        starts = [s for s in factors.block_starts if pos <= s < r_eff]
        if not starts:
            break
        keyed = []
        for s in starts:
            keyed.append((factors.eigs[s].real, s))
        best = min(keyed)[1]
        if best != pos:
            factors = _trexc_move(factors, best, pos)
        sizes = dict(zip(factors.block_starts, factors.block_sizes()))
        pos += sizes[pos]
    return factors


def reorder_dominant(factors: SchurFactors, r: int) -> tuple[SchurFactors, int]:
    """Move the r eigenvalues of largest real part into the leading block.

    If the cut would split a 2x2 complex-pair block the pair is kept intact and
    r_eff = r + 1 is returned; otherwise r_eff = r.  All factor invariants are
    re-verified after the orthogonal block swaps.
    """
    if not (1 <= r <= factors.m):
        raise CtreachError("invalid-input", f"r={r} out of range 1..{factors.m}")
    blocks = sorted(
        zip(factors.block_eigs(), factors.block_sizes(), range(len(factors.block_starts))),
        key=lambda t: (-t[0].real, t[2]),
    )
    selected: list[complex] = []
    total = 0
    for lam, size, _ in blocks:
        if total >= r:
            break
        selected.append(lam)
        total += size
    mask = _match_blocks(factors, selected)
    out = _trsen_select(factors, mask)
    # keep descending-real order inside the dominant cluster
    out = _sort_leading_desc(out, total)
    return out, total


def _sort_leading_desc(factors: SchurFactors, r_eff: int) -> SchurFactors:
    pos = 0
    while pos < r_eff:
        starts = [s for s in factors.block_starts if pos <= s < r_eff]
        if not starts:
            break
        best = max((factors.eigs[s].real, -s) for s in starts)[1]
        best = -best
        if best != pos:
            factors = _trexc_move(factors, best, pos)
        sizes = dict(zip(factors.block_starts, factors.block_sizes()))
        pos += sizes[pos]
    return factors


def stability_margin(a: np.ndarray) -> float:
    """Max real part of the eigenvalues of A (negative iff stable), via Schur."""
    factors = real_schur(np.asarray(a, dtype=float))
    return max(e.real for e in factors.eigs)


# ---------------------------------------------------------------------------
# Perron data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerronData:
    """Perron root data of the uniformised matrix H.

    ``nu`` is the strictly positive left eigenvector of H for its spectral
    radius rho, normalised to min entry 1; ``rho_bar = -gamma (1 - rho)`` is the
    dominant eigenvalue of A, computed through the flux identity
    ``rho_bar = -nu.(beta+chi) / nu.1`` which stays accurate when 1 - rho
    underflows.
    """

    rho_bar: float
    nu: np.ndarray

    def rho(self, gamma: float) -> float:
        return 1.0 + self.rho_bar / gamma


def perron_left_eigen(
    h: np.ndarray,
    gamma: float,
    tol: float = 1e-12,
    max_iter: int | None = None,
) -> PerronData:
    """Left Perron eigenvector of an irreducible sub-stochastic H.

    Shifted power iteration on (H + I)^T (the shift makes the iteration
    converge even for periodic H), refined by Rayleigh-quotient inverse
    iteration after a warm-up phase.  Requires Assumption 1 (irreducible H with
    a positive exit flux); raises ``perron-no-convergence`` past the iteration
    cap.
    """
    h = np.asarray(h, dtype=float)
    m = h.shape[0]
    if max_iter is None:
        max_iter = max(100 * m, 2000)
    b = (h + np.eye(m)).T
    v = np.ones(m)
    it = 0
    resid = _left_residual(h, v)
    while resid > tol and it < max_iter:
        # a batch of plain power steps (all-positive arithmetic)
        for _ in range(min(100, max_iter - it)):
            v = b @ v
            v /= v.max()
            it += 1
        resid = _left_residual(h, v)
        if resid <= tol:
            break
        # Rayleigh-quotient inverse-iteration refinement; accepted only when
        # the iterate stays positive and strictly improves the residual.
        for _ in range(2):
            sigma = float(v @ (b @ v) / (v @ v))
            try:
                w = np.linalg.solve(b - sigma * np.eye(m), v)
            except np.linalg.LinAlgError:
                break
            w = w / np.abs(w).max()
            if abs(float(w.min())) > abs(float(w.max())):
                w = -w
            if w.min() <= 0:
                break
            r_new = _left_residual(h, w)
            if r_new < resid:
                v, resid = w, r_new
            else:
                break
            if resid <= tol:
                break
    if resid > 1e-10:
        raise CtreachError(
            "perron-no-convergence",
            f"left-eigenvector residual {resid:.3g} after {it} iterations",
        )
    if v.min() <= 0:
        raise CtreachError("perron-no-convergence", "iterate lost positivity")
    nu = v / v.min()
    exit_flux = gamma * (1.0 - h @ np.ones(m))  # = beta + chi entrywise
    rho_bar = -float(nu @ exit_flux) / float(nu.sum())
    data = PerronData(rho_bar=rho_bar, nu=nu)
    resid = _left_residual(h, nu, rho=data.rho(gamma))
    if resid > 1e-10:
        raise CtreachError(
            "perron-no-convergence", f"left-eigenvector residual {resid:.3g}"
        )
    return data


def _left_residual(h: np.ndarray, v: np.ndarray, rho: float | None = None) -> float:
    hv = v @ h
    if rho is None:
        rho = float(v @ hv) / float(v @ v)
    return float(np.abs(hv - rho * v).max()) / float(np.abs(v).max())


def perron_is_simple(h: np.ndarray, gamma: float, data: PerronData) -> bool:
    """Deflated power-iteration check that the Perron root of H + I is simple.

    The check runs on the shifted (primitive) matrix: for periodic irreducible
    H another eigenvalue of H itself can share the modulus of rho even though
    rho is simple.
    """
    m = h.shape[0]
    shifted = h + np.eye(m)
    top = 1.0 + data.rho(gamma)
    # right Perron vector of the shifted matrix
    w = np.ones(m)
    for _ in range(100 * m):
        nxt = shifted @ w
        nxt /= nxt.max()
        if np.abs(nxt - w).max() < 1e-12:
            w = nxt
            break
        w = nxt
    nu = data.nu
    deflated = shifted - np.outer(w, nu) * (top / float(nu @ w))
    u = np.arange(1, m + 1, dtype=float)
    u /= np.linalg.norm(u)
    lam2 = 0.0
    for _ in range(200):
        nxt = deflated @ u
        lam2 = float(np.linalg.norm(nxt))
        if lam2 == 0.0:
            return True
        u = nxt / lam2
    return lam2 < top * (1.0 - 1e-9)
