"""Lyapunov certificates (M, kappa), error envelopes, and perturbation bounds.

A certificate is a positive-definite weight M and decay rate kappa with

    M > 0,   C_S^T C_S <= M,   M A + A^T M + 2 kappa M <= 0.

Given a generalised projection P (A P = P Abar), the weighted gap
V(t) = (X - P Xbar)^T M (X - P Xbar) then satisfies V(t) <= V(0) e^{-2 kappa t},
which certifies the output-error envelope eps(t) = coeff * e^{-kappa t} for
either coeff = sqrt(V(0)) or the looser closed form coeff = xi ||Gamma||_2 with
xi^2 = lambda_max(A^{-T} M A^{-1}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import CtreachError
from .models import ReachabilitySystem
from .spectral import PerronData

__all__ = [
    "Certificate",
    "ErrorEnvelope",
    "LmiResult",
    "PerturbationBound",
    "certificate_from_perron",
    "envelope",
    "envelope_from_initial_value",
    "perturbation_bound",
    "verify_lmi",
    "xi_factor",
]

_LMI_TOL = 1e-10  # applied relative to the scale of the checked matrix


@dataclass(frozen=True)
class Certificate:
    """Positive-definite weight M and decay rate kappa (1/time units)."""

    m_weight: np.ndarray
    kappa: float

    @property
    def diag(self) -> np.ndarray | None:
        """Diagonal of M when M is diagonal, else None."""
        m = self.m_weight
        if np.count_nonzero(m - np.diag(np.diag(m))) == 0:
            return np.diag(m).copy()
        return None


@dataclass(frozen=True)
class LmiResult:
    feasible: bool
    which_constraint: str | None = None
    margin: float = 0.0


@dataclass(frozen=True)
class ErrorEnvelope:
    """Certified output-error bound coeff * exp(-kappa * t).

    ``coeff`` is the certified coefficient actually used; ``coeff_gamma`` keeps
    the closed-form xi*||Gamma||_2 value for diagnostics (coeff <= coeff_gamma
    whenever both are available).
    """

    coeff: float
    kappa: float
    coeff_gamma: float | None = None

    def eval(self, t) -> np.ndarray | float:
        return self.coeff * np.exp(-self.kappa * np.asarray(t, dtype=float))


def verify_lmi(
    a: np.ndarray,
    m_weight: np.ndarray,
    kappa: float,
    c_s: np.ndarray,
) -> LmiResult:
    """Evaluate the three certificate conditions with scaled tolerance 1e-10.

    Tolerances are relative to max(1, ||.||_max) of the matrix being tested;
    extreme eigenvalues come from symmetric eigensolves of the symmetrised
    matrices.
    """
    m_weight = np.asarray(m_weight, dtype=float)
    m_sym = 0.5 * (m_weight + m_weight.T)
    # strict positive definiteness; a huge condition number is not infeasibility
    lam_min_m = float(sla.eigvalsh(m_sym)[0])
    if lam_min_m <= 0.0:
        return LmiResult(False, "M-not-positive-definite", lam_min_m)

    gap = m_sym - c_s.T @ c_s
    lam_min_gap = float(sla.eigvalsh(0.5 * (gap + gap.T))[0])
    if lam_min_gap < -_LMI_TOL * max(1.0, float(np.abs(gap).max())):
        return LmiResult(False, "output-weight-not-dominated", lam_min_gap)

    s = m_sym @ a + a.T @ m_sym + 2.0 * kappa * m_sym
    s = 0.5 * (s + s.T)
    lam_max_s = float(sla.eigvalsh(s)[-1])
    if lam_max_s > _LMI_TOL * max(1.0, float(np.abs(s).max())):
        return LmiResult(False, "decay-inequality", lam_max_s)
    return LmiResult(True, None, lam_max_s)


def certificate_from_perron(
    system: ReachabilitySystem,
    perron: PerronData,
    target_scaled: bool = False,
) -> Certificate:
    """Diagonal certificate M = diag(nu), kappa = -rho_bar / 2.

    With ``target_scaled`` the normalisation of nu is relative to the tracked
    states only (min over S0 equals 1 instead of the global min); the LMIs are
    scale-invariant so feasibility is unchanged while output envelopes tighten.
    The certificate is verified before it is returned.
    """
    kappa = -0.5 * perron.rho_bar
    if kappa <= 0.0:
        raise CtreachError("certificate-invalid", f"nonpositive decay rate {kappa:.3g}")
    nu = perron.nu.copy()
    if target_scaled:
        sel = system.c_s @ nu
        nu = nu / float(sel.min())
    m_weight = np.diag(nu)
    res = verify_lmi(system.a, m_weight, kappa, system.c_s)
    if not res.feasible:
        raise CtreachError(
            "certificate-invalid",
            f"constructive certificate failed {res.which_constraint} "
            f"(margin {res.margin:.3g})",
        )
    return Certificate(m_weight=m_weight, kappa=kappa)


def xi_factor(a: np.ndarray, m_weight: np.ndarray) -> float:
    """xi = sqrt(lambda_max(A^{-T} M A^{-1})), computed via linear solves."""
    try:
        y = np.linalg.solve(a, np.eye(a.shape[0]))
    except np.linalg.LinAlgError:
        raise CtreachError("assumption-violated", "A is singular") from None
    s = y.T @ m_weight @ y
    lam = float(sla.eigvalsh(0.5 * (s + s.T))[-1])
    return math.sqrt(max(lam, 0.0))


def envelope(
    system: ReachabilitySystem,
    cert: Certificate,
    gamma_mismatch: np.ndarray,
) -> ErrorEnvelope:
    """Closed-form envelope eps(t) = xi * ||Gamma||_2 * e^{-kappa t}."""
    xi = xi_factor(system.a, cert.m_weight)
    coeff = xi * float(np.linalg.norm(gamma_mismatch))
    return ErrorEnvelope(coeff=coeff, kappa=cert.kappa, coeff_gamma=coeff)


def envelope_from_initial_value(
    cert: Certificate,
    residual: np.ndarray,
    coeff_gamma: float | None = None,
) -> ErrorEnvelope:
    """Envelope from the initial Lyapunov value sqrt(V(0)) = ||residual||_M.

    This is the middle member of the certificate chain
    ``gap(t) <= sqrt(V(t)) <= sqrt(V(0)) e^{-kappa t} <= xi ||Gamma|| e^{-kappa t}``
    and is therefore certified whenever the closed form is, but never looser.
    """
    v0 = float(residual @ cert.m_weight @ residual)
    coeff = math.sqrt(max(v0, 0.0))
    if coeff_gamma is not None:
        coeff = min(coeff, coeff_gamma)
    return ErrorEnvelope(coeff=coeff, kappa=cert.kappa, coeff_gamma=coeff_gamma)


@dataclass(frozen=True)
class PerturbationBound:
    """Entrywise bound |e_i(t)| <= (m*eps + rho0) * Lambda_i.

    Lambda is the vector of row sums of -A^{-1}; for generator-derived stable A
    the matrix exponential is entrywise nonnegative, so Lambda >= 0.
    """

    lambda_rowsums: np.ndarray
    eps: float
    rho0: float

    def entry_bounds(self) -> np.ndarray:
        m = self.lambda_rowsums.shape[0]
        return (m * self.eps + self.rho0) * self.lambda_rowsums


def perturbation_bound(a_hat: np.ndarray, eps: float, rho0: float) -> PerturbationBound:
    """Appendix-style bound for eps-bisimilar pairs with stable ``a_hat``."""
    a_hat = np.asarray(a_hat, dtype=float)
    try:
        lam = np.linalg.solve(a_hat, -np.ones(a_hat.shape[0]))
    except np.linalg.LinAlgError:
        raise CtreachError("assumption-violated", "A is singular") from None
    if not np.all(np.isfinite(lam)):
        raise CtreachError("assumption-violated", "A is numerically singular")
    return PerturbationBound(lambda_rowsums=lam, eps=float(eps), rho0=float(rho0))
