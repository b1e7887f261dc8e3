"""CTMDP reduction, dwell-time error recursion, and sub-optimal policy synthesis.

Under a policy with dwell time tau, the reachability dynamics form a switched
affine system: per decision d the translated state obeys dX/dt = A_d X between
switches and jumps by Delta_{ij} = A_j^{-1} beta_j - A_i^{-1} beta_i at them.
Each decision gets its own reduction (A_d P_d = P_d Abar_d) and certificate
(M_d, kappa_d); the certified gap after n switches follows the pair recursion

    eps_bar_i = mu g eps_bar_{i-1} + Delta_max
    eps_i     = mu g eps_{i-1} + 2 mu g eps_bar_{i-1} + 2 Delta_max

with g = e^{-kappa tau}, kappa = min_d kappa_d and mu dominating all pairwise
weight changes M_{d_i} <= mu M_{d_j}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import CtreachError
from .lyapunov import verify_lmi
from .models import Ctmdp, ReachabilitySystem, build_reachability_system, check_assumption1
from .reduction import _eigen_blocks, _order_blocks, initial_state, project
from .spectral import perron_left_eigen, real_schur, reorder_selected, stability_margin
from .solvers import oracle_expm

__all__ = [
    "SwitchedSystem",
    "PiecewisePolicy",
    "ErrorRecursion",
    "SwitchedTrajectory",
    "bound_at_horizon",
    "build_switched",
    "error_recursion",
    "error_seeds",
    "jump_reset",
    "reduce_ctmdp",
    "simulate_switched_full",
    "simulate_switched_reduced",
    "steady_error",
    "synthesize_policy",
]


@dataclass(frozen=True)
class SwitchedSystem:
    """Per-decision reductions plus the global switching-error constants."""

    decisions: tuple[str, ...]
    a_list: tuple[np.ndarray, ...]
    beta_list: tuple[np.ndarray, ...]
    a_bar_list: tuple[np.ndarray, ...]
    p_list: tuple[np.ndarray, ...]
    x_bar0_list: tuple[np.ndarray, ...]
    m_list: tuple[np.ndarray, ...]
    kappa_list: tuple[float, ...]
    steady_list: tuple[np.ndarray, ...]
    kappa: float
    mu: float
    delta_max: float
    c_s: np.ndarray
    identity_m: bool
    r_requested: int
    r_eff: tuple[int, ...]
    bound_at_horizon: float | None = None
    tolerance_met: bool = True

    @property
    def n_decisions(self) -> int:
        return len(self.decisions)

    def delta(self, d_from: int, d_to: int) -> np.ndarray:
        return self.steady_list[d_to] - self.steady_list[d_from]

    def m_bar(self, d: int) -> np.ndarray:
        p = self.p_list[d]
        return p.T @ self.m_list[d] @ p

    def weighted_norm(self, d: int, vec: np.ndarray) -> float:
        return math.sqrt(max(float(vec @ self.m_list[d] @ vec), 0.0))


@dataclass(frozen=True)
class PiecewisePolicy:
    """Piecewise-constant decision schedule with a minimum dwell time."""

    segments: tuple[tuple[float, int], ...]  # (start_time, decision index)
    dwell_tau: float
    horizon: float

    def __post_init__(self):
        if not self.segments or self.segments[0][0] != 0.0:
            raise CtreachError("invalid-input", "policy must start at time 0")
        starts = [s for s, _ in self.segments]
        for a, b in zip(starts, starts[1:]):
            if b - a < self.dwell_tau * (1 - 1e-12):
                raise CtreachError(
                    "invalid-input", f"segment gap {b - a:.6g} violates dwell {self.dwell_tau:.6g}"
                )
        for (_, d1), (_, d2) in zip(self.segments, self.segments[1:]):
            if d1 == d2:
                raise CtreachError("invalid-input", "consecutive segments share a decision")

    @property
    def switch_times(self) -> tuple[float, ...]:
        return tuple(s for s, _ in self.segments[1:])

    def active_at(self, t: float) -> int:
        d = self.segments[0][1]
        for start, dec in self.segments:
            if start <= t:
                d = dec
            else:
                break
        return d

    def to_csv(self, header_note: str = "") -> str:
        lines = []
        if header_note:
            lines.append(f"# {header_note}")
        lines.append("start_time,decision")
        for start, dec in self.segments:
            lines.append(f"{start:.12g},{dec}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _decision_kappa(system: ReachabilitySystem) -> float:
    if check_assumption1(system).holds:
        perron = perron_left_eigen(system.h, system.gamma_unif)
        return -0.5 * perron.rho_bar
    margin = stability_margin(system.a)
    if margin >= 0:
        raise CtreachError("assumption-violated", "decision matrix is not stable")
    return -0.5 * margin


def build_switched(
    model: Ctmdp, r: int, common_identity_m: bool = True
) -> SwitchedSystem:
    """Per-decision Schur reductions at shared order r plus error constants.

    With ``common_identity_m`` every M_d is the identity (mu = 1); the LMIs are
    verified per decision at kappa_d and ``identity-M-infeasible`` is raised on
    failure.  Otherwise M_d = diag(nu_d) and mu is the largest pairwise ratio
    of the diagonals.
    """
    systems = [build_reachability_system(model.as_ctmc(d)) for d in range(len(model.decisions))]
    for d, system in enumerate(systems):
        margin = stability_margin(system.a)
        if margin >= 0:
            raise CtreachError(
                "assumption-violated",
                f"A_d for decision {model.decisions[d]!r} is not stable",
            )
    kappas = [_decision_kappa(s) for s in systems]
    m = systems[0].m

    m_list: list[np.ndarray] = []
    if common_identity_m:
        ident = np.eye(m)
        for d, system in enumerate(systems):
            res = verify_lmi(system.a, ident, kappas[d], system.c_s)
            if not res.feasible:
                raise CtreachError(
                    "identity-M-infeasible",
                    f"identity weight fails {res.which_constraint} for decision "
                    f"{model.decisions[d]!r} (margin {res.margin:.3g})",
                )
            m_list.append(ident)
        mu = 1.0
    else:
        for d, system in enumerate(systems):
            if not check_assumption1(system).holds:
                raise CtreachError(
                    "assumption-violated",
                    f"decision {model.decisions[d]!r} is reducible; diagonal "
                    "certificates need irreducible decisions",
                )
            perron = perron_left_eigen(system.h, system.gamma_unif)
            m_list.append(np.diag(perron.nu))
        mu = 1.0
        for i in range(len(systems)):
            for j in range(len(systems)):
                if i == j:
                    continue
                ratio = float(np.max(np.diag(m_list[i]) / np.diag(m_list[j])))
                mu = max(mu, ratio)

    steady_list = [np.linalg.solve(s.a, s.beta) for s in systems]
    blocks_list = [
        _order_blocks(_eigen_blocks(s.a, steady_list[d]), np.sqrt(np.diag(m_list[d])))
        for d, s in enumerate(systems)
    ]

    def cut_for(blocks, r_req):
        acc = 0
        for k, blk in enumerate(blocks):
            acc += blk.size
            if acc >= r_req:
                return k + 1, acc
        return len(blocks), m

    # the error recursion mixes reduced states across decisions, so every
    # decision must end up with the same effective order
    r_shared = r
    while True:
        cuts = [cut_for(blocks, r_shared) for blocks in blocks_list]
        sizes = [total for _, total in cuts]
        if all(s == sizes[0] for s in sizes):
            break
        r_shared = max(sizes)

    a_bar_list, p_list, x_bar0_list, r_eff_list = [], [], [], []
    for d, system in enumerate(systems):
        chosen, total = cuts[d]
        factors = real_schur(system.a)
        if total >= m:
            reordered, r_eff = factors, m
        else:
            reordered, r_eff = reorder_selected(
                factors, [b.eig for b in blocks_list[d][:chosen]]
            )
        a_bar, p = project(reordered, r_eff)
        a_bar_list.append(a_bar)
        p_list.append(p)
        x_bar0_list.append(initial_state(p, m_list[d], steady_list[d]))
        r_eff_list.append(r_eff)

    kappa = min(kappas)
    n_dec = len(systems)
    delta_max = 0.0
    for i in range(n_dec):
        for j in range(n_dec):
            if i == j:
                continue
            dvec = steady_list[j] - steady_list[i]
            delta_max = max(delta_max, math.sqrt(float(dvec @ m_list[j] @ dvec)))
    return SwitchedSystem(
        decisions=model.decisions,
        a_list=tuple(s.a for s in systems),
        beta_list=tuple(s.beta for s in systems),
        a_bar_list=tuple(a_bar_list),
        p_list=tuple(p_list),
        x_bar0_list=tuple(x_bar0_list),
        m_list=tuple(m_list),
        kappa_list=tuple(kappas),
        steady_list=tuple(steady_list),
        kappa=kappa,
        mu=mu,
        delta_max=delta_max,
        c_s=systems[0].c_s,
        identity_m=common_identity_m,
        r_requested=r,
        r_eff=tuple(r_eff_list),
    )


# ---------------------------------------------------------------------------
# error machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorRecursion:
    """Iterates of the switching-error pair recursion."""

    eps: tuple[float, ...]
    eps_bar: tuple[float, ...]
    g: float

    @property
    def final(self) -> float:
        return self.eps[-1]


def error_recursion(
    sys: SwitchedSystem, tau: float, n: int, eps0: float, eps_bar0: float
) -> ErrorRecursion:
    """Iterate the pair recursion n times with g = e^{-kappa tau}.

    Requires the dwell-time condition tau > log(mu)/kappa (raises
    ``dwell-too-short`` otherwise).
    """
    if n < 0:
        raise CtreachError("invalid-input", "n must be nonnegative")
    if tau <= math.log(sys.mu) / sys.kappa:
        raise CtreachError(
            "dwell-too-short",
            f"dwell {tau:.6g} must exceed log(mu)/kappa = "
            f"{math.log(sys.mu) / sys.kappa:.6g}",
        )
    g = math.exp(-sys.kappa * tau)
    eps = [float(eps0)]
    eps_bar = [float(eps_bar0)]
    for _ in range(n):
        e_prev, eb_prev = eps[-1], eps_bar[-1]
        eps_bar.append(sys.mu * g * eb_prev + sys.delta_max)
        eps.append(sys.mu * g * e_prev + 2 * sys.mu * g * eb_prev + 2 * sys.delta_max)
    return ErrorRecursion(eps=tuple(eps), eps_bar=tuple(eps_bar), g=g)


def bound_at_horizon(eps_n: float, kappa: float, horizon: float, t_n: float) -> float:
    """Certified gap at the horizon: eps_n * e^{-kappa (T - t_n)}."""
    if t_n > horizon:
        raise CtreachError("invalid-input", "last switch after the horizon")
    return float(eps_n) * math.exp(-kappa * (horizon - t_n))


def steady_error(mu: float, g: float, delta_max: float) -> float:
    """Limit of the error recursion for mu*g < 1: 2 Delta_max / (1 - mu g)^2.

    Derivation: the recursion is eps_i = A eps_{i-1} + B Delta_max with
    A = [[mu g, 2 mu g], [0, mu g]], B = (2, 1); the fixpoint is
    (I - A)^{-1} B Delta_max whose first component is 2/(1 - mu g)^2 Delta_max
    (note the off-diagonal of I - A is -2 mu g; verified against the
    iterate-to-convergence oracle).
    """
    if mu * g >= 1.0:
        raise CtreachError("recursion-divergent", f"mu*g = {mu * g:.6g} >= 1")
    return 2.0 / (1.0 - mu * g) ** 2 * delta_max


def error_seeds(sys: SwitchedSystem, d0: int, d1: int | None = None) -> tuple[float, float]:
    """(eps0, eps_bar0) for a policy starting with decision d0 (next: d1).

    eps0 = ||steady_{d0} - P_{d0} Xbar_{d0}(0)||_{M_{d0}};
    eps_bar0 = ||Xbar(0)||_{Mbar_{d1}} with d1 := d0 when only one decision is
    ever used.
    """
    if d1 is None:
        d1 = d0
    resid = sys.steady_list[d0] - sys.p_list[d0] @ sys.x_bar0_list[d0]
    eps0 = sys.weighted_norm(d0, resid)
    mbar = sys.m_bar(d1)
    x = sys.x_bar0_list[d0]
    eps_bar0 = math.sqrt(max(float(x @ mbar @ x), 0.0))
    return eps0, eps_bar0


def jump_reset(
    sys: SwitchedSystem, d_from: int, d_to: int, x_bar_minus: np.ndarray
) -> np.ndarray:
    """Least-squares re-initialisation of the reduced state at a switch.

    Minimises ||P_from Xbar + Delta - P_to Xbar_plus|| in the M_{d_to} norm;
    with identity weights this is exactly P_to^T (P_from Xbar + Delta).
    """
    y = sys.p_list[d_from] @ x_bar_minus + sys.delta(d_from, d_to)
    p_to = sys.p_list[d_to]
    if sys.identity_m:
        return p_to.T @ y
    return initial_state(p_to, sys.m_list[d_to], y)


# ---------------------------------------------------------------------------
# order search
# ---------------------------------------------------------------------------

def reduce_ctmdp(
    model: Ctmdp,
    horizon: float,
    eps_max: float,
    tau: float,
    common_identity_m: bool | None = None,
) -> SwitchedSystem:
    """Smallest shared order whose horizon bound meets ``eps_max``.

    n = floor(T / tau) switches are budgeted; the recursion is seeded with the
    worst case over initial decisions so the bound holds for every policy with
    dwell time at least tau.  When no r < m qualifies, the full order is
    returned flagged ``tolerance_met=False`` (the bound can stay positive when
    Delta_max > 0).  ``common_identity_m=None`` tries the identity weights
    first and falls back to the per-decision diagonal certificates when the
    identity LMIs are infeasible.
    """
    if tau <= 0:
        raise CtreachError("invalid-input", "dwell time must be positive")
    if common_identity_m is None:
        try:
            return reduce_ctmdp(model, horizon, eps_max, tau, common_identity_m=True)
        except CtreachError as exc:
            if exc.code != "identity-M-infeasible":
                raise
            return reduce_ctmdp(model, horizon, eps_max, tau, common_identity_m=False)
    n_switch = int(math.floor(horizon / tau)) if len(model.decisions) > 1 else 0
    m = len(model.transient_states)

    best = None
    for r in range(1, m + 1):
        sys = build_switched(model, r, common_identity_m=common_identity_m)
        seeds = [
            error_seeds(sys, d0, d1)
            for d0 in range(sys.n_decisions)
            for d1 in range(sys.n_decisions)
        ]
        eps0 = max(s[0] for s in seeds)
        eps_bar0 = max(s[1] for s in seeds)
        rec = error_recursion(sys, tau, n_switch, eps0, eps_bar0)
        bound = bound_at_horizon(rec.final, sys.kappa, horizon, n_switch * tau)
        best = _with_bound(sys, bound, bound <= eps_max)
        if bound <= eps_max:
            return best
        if max(sys.r_eff) >= m:
            break
    return best


def _with_bound(sys: SwitchedSystem, bound: float, met: bool) -> SwitchedSystem:
    from dataclasses import replace

    return replace(sys, bound_at_horizon=bound, tolerance_met=met)


# ---------------------------------------------------------------------------
# policy synthesis and simulation
# ---------------------------------------------------------------------------

def _scores(sys: SwitchedSystem, x_estimates: list[np.ndarray]) -> np.ndarray:
    """Per-decision tracked-derivative scores sum_{i in S0} (A_d x_d)_i."""
    out = np.empty(sys.n_decisions)
    for d in range(sys.n_decisions):
        out[d] = float(np.sum(sys.c_s @ (sys.a_list[d] @ x_estimates[d])))
    return out


def _per_state_argmax(sys: SwitchedSystem, x_estimates: list[np.ndarray]) -> np.ndarray:
    rates = np.stack([sys.c_s @ (sys.a_list[d] @ x_estimates[d]) for d in range(sys.n_decisions)])
    return np.argmax(rates, axis=0)


@dataclass(frozen=True)
class SynthesisResult:
    policy: PiecewisePolicy
    delta: float
    argmax_table: tuple[tuple[float, tuple[int, ...]], ...]


def synthesize_policy(
    sys: SwitchedSystem, horizon: float, tau: float, delta: float | None = None
) -> SynthesisResult:
    """Dwell-time-respecting sub-optimal policy from the reduced switched system.

    All decisions' reduced states are propagated in parallel on the delta grid;
    at each evaluation instant past the dwell window the decision maximising
    the tracked reachability derivative is chosen, and on a change every
    tracker is re-anchored through the jump reset.  Ties break towards the
    smaller decision index.
    """
    if delta is None:
        delta = min(tau / 50.0, horizon * 1e-3)
    if delta > tau:
        raise CtreachError("invalid-input", "delta must not exceed the dwell time")
    hold_steps = int(math.floor(tau / delta)) + 1
    total_steps = int(math.floor(horizon / delta)) + 1

    props = [sla.expm(sys.a_bar_list[d] * delta) for d in range(sys.n_decisions)]
    xbars = [sys.x_bar0_list[d].copy() for d in range(sys.n_decisions)]

    def estimates() -> list[np.ndarray]:
        return [sys.p_list[d] @ xbars[d] for d in range(sys.n_decisions)]

    d_curr = int(np.argmax(_scores(sys, [s for s in sys.steady_list])))
    segments = [(0.0, d_curr)]
    table = [(0.0, tuple(int(v) for v in _per_state_argmax(sys, [s for s in sys.steady_list])))]

    k = 0
    hold_until = hold_steps
    while k < total_steps:
        # propagate one delta step
        for d in range(sys.n_decisions):
            xbars[d] = props[d] @ xbars[d]
        k += 1
        if k < hold_until or k >= total_steps:
            continue
        est = estimates()
        scores = _scores(sys, est)
        d_new = int(np.argmax(scores))
        table.append((k * delta, tuple(int(v) for v in _per_state_argmax(sys, est))))
        if d_new != d_curr:
            x_prev = xbars[d_curr]
            for d in range(sys.n_decisions):
                xbars[d] = jump_reset(sys, d_curr, d, x_prev)
            segments.append((k * delta, d_new))
            d_curr = d_new
            hold_until = k + hold_steps
    policy = PiecewisePolicy(segments=tuple(segments), dwell_tau=tau, horizon=horizon)
    return SynthesisResult(policy=policy, delta=delta, argmax_table=tuple(table))


@dataclass(frozen=True)
class SwitchedTrajectory:
    times: np.ndarray
    states: np.ndarray  # m x n_times
    decisions: np.ndarray


def simulate_switched_full(
    model_or_sys, policy: PiecewisePolicy, horizon: float, grid: np.ndarray
) -> SwitchedTrajectory:
    """Exact piecewise-affine integration of dW/dt = A_d W + beta_d.

    ``W`` is continuous across switches; each segment is integrated with the
    matrix-exponential oracle on the affine-augmented system.
    """
    if isinstance(model_or_sys, SwitchedSystem):
        a_list, beta_list = model_or_sys.a_list, model_or_sys.beta_list
    else:
        systems = [
            build_reachability_system(model_or_sys.as_ctmc(d))
            for d in range(len(model_or_sys.decisions))
        ]
        a_list = [s.a for s in systems]
        beta_list = [s.beta for s in systems]
    m = a_list[0].shape[0]
    grid = np.asarray(sorted({float(t) for t in grid}), dtype=float)
    grid = grid[(grid >= 0) & (grid <= horizon)]

    stops: list[tuple[float, int | None]] = [(t, k) for k, t in enumerate(grid)]
    stops += [(t, None) for t in policy.switch_times if 0.0 < t <= horizon]
    stops.sort(key=lambda p: (p[0], p[1] is None))

    out = np.zeros((m, len(grid)))
    w = np.zeros(m + 1)
    w[m] = 1.0  # affine augmentation
    t_curr = 0.0
    for t_next, rec in stops:
        if t_next > t_curr:
            d = policy.active_at(0.5 * (t_curr + t_next))
            aug = np.zeros((m + 1, m + 1))
            aug[:m, :m] = a_list[d]
            aug[:m, m] = beta_list[d]
            w = oracle_expm(aug, w, t_next - t_curr)
            t_curr = t_next
        if rec is not None:
            out[:, rec] = w[:m]
    decs = np.array([policy.active_at(t) for t in grid])
    return SwitchedTrajectory(times=grid, states=out, decisions=decs)


def simulate_switched_reduced(
    sys: SwitchedSystem, policy: PiecewisePolicy, horizon: float
) -> tuple[np.ndarray, int, int, float]:
    """Reduced state at the horizon under a policy, with jump resets applied.

    Returns (xbar_T, active decision at T, number of switches, last switch time).
    """
    d_curr = policy.segments[0][1]
    xbar = sys.x_bar0_list[d_curr].copy()
    t_curr = 0.0
    n_switch = 0
    t_last = 0.0
    for start, dec in policy.segments[1:]:
        if start > horizon:
            break
        xbar = sla.expm(sys.a_bar_list[d_curr] * (start - t_curr)) @ xbar
        xbar = jump_reset(sys, d_curr, dec, xbar)
        d_curr = dec
        t_curr = start
        n_switch += 1
        t_last = start
    xbar = sla.expm(sys.a_bar_list[d_curr] * (horizon - t_curr)) @ xbar
    return xbar, d_curr, n_switch, t_last
