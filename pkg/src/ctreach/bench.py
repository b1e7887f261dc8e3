"""Benchmark model builders and the reduce/solve/synthesize/bench workflows.

The builders produce the queueing benchmarks (M/M/1 birth-death chain, the
M/Cox2/1 -> M/M/1 tandem network, its two-mode CTMDP variant) and seeded dense
random generators.  The workflow functions are the single implementation
behind both the HTTP service and the CLI.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import CtreachError
from .models import (
    Ctmc,
    Ctmdp,
    build_reachability_system,
    full_generator,
    prune_reducible,
)
from .reduction import reduce_ctmc
from .solvers import (
    default_grid,
    eval_expsum,
    expsum_action,
    solve_reduced,
    triangular_expsum,
    uniformization_solve,
)
from .spectral import real_schur
from .switched import (
    PiecewisePolicy,
    bound_at_horizon,
    error_recursion,
    error_seeds,
    jump_reset,
    reduce_ctmdp,
    synthesize_policy,
)

__all__ = [
    "BenchConfig",
    "RuntimeRecord",
    "build_mm1",
    "build_random_generator",
    "build_tandem",
    "build_tandem_ctmdp",
    "run_bench",
    "run_reduce",
    "run_solve",
    "run_synthesize",
]


# ---------------------------------------------------------------------------
# model builders
# ---------------------------------------------------------------------------

def _csr(pairs: dict[tuple[int, int], float], n: int) -> sp.csr_matrix:
    if not pairs:
        return sp.csr_matrix((n, n))
    ij = np.array(list(pairs.keys()), dtype=int)
    data = np.array(list(pairs.values()))
    return sp.csr_matrix((data, (ij[:, 0], ij[:, 1])), shape=(n, n))


def build_mm1(cap: int, lambda_arrival: float, mu_service: float) -> Ctmc:
    """Birth-death M/M/1 queue with capacity ``cap``; good = full queue.

    The full state is the reachability goal and is kept absorbing (no service
    out of it), so at cap = 1 the probability is exactly 1 - e^{-lambda t}.
    """
    if cap < 1:
        raise CtreachError("invalid-input", "capacity must be >= 1")
    if lambda_arrival <= 0 or mu_service <= 0:
        raise CtreachError("invalid-input", "rates must be positive")
    n = cap + 1
    pairs: dict[tuple[int, int], float] = {}
    for i in range(cap):
        pairs[(i, i + 1)] = lambda_arrival
        if i >= 1:
            pairs[(i, i - 1)] = mu_service
    return Ctmc(n_states=n, rates=_csr(pairs, n), good=cap, target_rows=(0,))


def _tandem_states(cap: int, exclude_full: bool = True):
    """(q1, phase, q2) with the phase merged at q1 = 0.

    With ``exclude_full`` the two both-full states are left out (they are
    aggregated into the absorbing good state of the CTMC benchmark).
    """
    idx: dict[tuple[int, int, int], int] = {}
    states = []
    for q1 in range(cap + 1):
        for ph in (1,) if q1 == 0 else (1, 2):
            for q2 in range(cap + 1):
                if exclude_full and q1 == cap and q2 == cap:
                    continue
                idx[(q1, ph, q2)] = len(states)
                states.append((q1, ph, q2))
    return idx, states


def build_tandem(
    cap: int,
    lam: float,
    mu1: float,
    mu2: float,
    mu3: float,
    a: float,
    b: float,
    p: float = 0.0,
    delta_lambda: float = 0.0,
) -> Ctmc:
    """Tandem M/Cox2/1 -> M/M/1 network; good = both stations at capacity.

    Jobs arrive at rate ``lam``; phase-1 service (rate ``mu1``) routes to
    phase 2 with probability ``a`` or hands the job to station 2 with
    probability ``b`` (blocked while station 2 is full); phase-2 completion
    (``mu2``) also hands over; station 2 serves at ``mu3``.  A repair loop
    returning ``p`` of the handed-over jobs is modelled as an extra arrival
    stream of rate ``p * delta_lambda``.  cap = 5 yields the 65-state chain.
    """
    if cap < 1:
        raise CtreachError("invalid-input", "capacity must be >= 1")
    if abs(a + b - 1.0) > 1e-12 or not (0.0 <= p <= 1.0):
        raise CtreachError("inconsistent-routing", "need a + b = 1 and p in [0, 1]")
    if min(lam, mu1, mu2, mu3) <= 0 or a < 0 or b < 0:
        raise CtreachError("invalid-input", "rates must be positive")
    idx, states = _tandem_states(cap)
    good = len(states)
    n = good + 1
    lam_eff = lam + p * delta_lambda

    def tgt(s):
        return good if (s[0] == cap and s[2] == cap) else idx[s]

    pairs: dict[tuple[int, int], float] = {}

    def add(i, s, v):
        if v > 0:
            key = (i, tgt(s))
            pairs[key] = pairs.get(key, 0.0) + v

    for s in states:
        q1, ph, q2 = s
        i = idx[s]
        if q1 < cap:
            add(i, (q1 + 1, ph if q1 > 0 else 1, q2), lam_eff)
        if q1 >= 1 and ph == 1:
            add(i, (q1, 2, q2), a * mu1)
            if q2 < cap:
                add(i, (q1 - 1, 1, q2 + 1), b * mu1)
        if q1 >= 1 and ph == 2 and q2 < cap:
            add(i, (q1 - 1, 1, q2 + 1), mu2)
        if q2 >= 1:
            add(i, (q1, ph, q2 - 1), mu3)
    return Ctmc(
        n_states=n,
        rates=_csr(pairs, n),
        good=good,
        target_rows=(idx[(0, 1, 0)],),
    )


def build_tandem_ctmdp(
    cap: int,
    lam: float,
    mu1: float,
    mu2: float,
    mu3: float,
    modes: tuple[tuple[float, float, float], ...] = ((0.6, 0.1, 0.05), (0.7, 0.05, 0.05)),
    max_choice_states: int = 12,
) -> Ctmdp:
    """Two-mode tandem CTMDP; good = both stations empty.

    ``modes`` lists (a, p, delta_lambda) per mode; the mode is chosen
    independently in every state with an active routing choice
    (q1 >= 1, phase 1, station 2 not full), so the decision vectors enumerate
    all mode assignments (cap = 2 gives 4 choice states, 16 decision vectors).
    """
    if cap < 1:
        raise CtreachError("invalid-input", "capacity must be >= 1")
    for a, p, _ in modes:
        if not (0.0 <= a <= 1.0 and 0.0 <= p <= 1.0):
            raise CtreachError("inconsistent-routing", "mode needs a, p in [0, 1]")
    idx, states = _tandem_states(cap, exclude_full=False)
    n = len(states)
    good = idx[(0, 1, 0)]
    choice_states = [
        idx[(q1, 1, q2)] for q1 in range(1, cap + 1) for q2 in range(cap)
    ]
    if len(choice_states) > max_choice_states:
        raise CtreachError(
            "too-many-decision-vectors",
            f"{len(choice_states)} choice states would give "
            f"{len(modes) ** len(choice_states)} decision vectors",
        )
    n_modes = len(modes)
    n_dec = n_modes ** len(choice_states)
    decision_labels = []
    mats = []
    for code in range(n_dec):
        assign: dict[int, int] = {}
        c = code
        label = []
        for s in choice_states:
            assign[s] = c % n_modes
            label.append(str(c % n_modes))
            c //= n_modes
        decision_labels.append("".join(label))
        pairs: dict[tuple[int, int], float] = {}

        def add(i, s, v):
            if v > 0 and i != idx.get(s, -1):
                key = (i, idx[s])
                pairs[key] = pairs.get(key, 0.0) + v

        for s in states:
            q1, ph, q2 = s
            i = idx[s]
            mode = modes[assign[i]] if i in assign else None
            a_eff = mode[0] if mode is not None else None
            extra = mode[1] * mode[2] if mode is not None else 0.0
            if q1 < cap:
                add(i, (q1 + 1, ph if q1 > 0 else 1, q2), lam + extra)
            if q1 >= 1 and ph == 1:
                if q2 < cap:
                    add(i, (q1, 2, q2), a_eff * mu1)
                    add(i, (q1 - 1, 1, q2 + 1), (1.0 - a_eff) * mu1)
                else:
                    add(i, (q1, 2, q2), mu1)  # handover blocked: forced phase 2
            if q1 >= 1 and ph == 2 and q2 < cap:
                add(i, (q1 - 1, 1, q2 + 1), mu2)
            if q2 >= 1:
                add(i, (q1, ph, q2 - 1), mu3)
        mats.append(_csr(pairs, n))
    init = idx[(min(cap, 2), 2, 0)] if cap >= 1 else good
    return Ctmdp(
        n_states=n,
        decisions=tuple(decision_labels),
        rates_per_decision=tuple(mats),
        good=good,
        target_rows=(init,),
    )


def build_random_generator(n: int, seed: int, density: float = 1.0) -> Ctmc:
    """Seeded dense random generator; good = highest state, initial = state 0."""
    if n < 2:
        raise CtreachError("invalid-input", "need at least two states")
    if not (0.0 < density <= 1.0):
        raise CtreachError("invalid-input", "density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    mat = rng.uniform(size=(n, n))
    if density < 1.0:
        keep = rng.uniform(size=(n, n)) < density
        mat = np.where(keep, mat, 0.0)
    np.fill_diagonal(mat, 0.0)
    rates = sp.csr_matrix(mat)
    return Ctmc(n_states=n, rates=rates, good=n - 1, target_rows=(0,))


# ---------------------------------------------------------------------------
# workflows
# ---------------------------------------------------------------------------

def analyze_ctmc(model: Ctmc):
    """Prune, partition, and return (pruned model, report, reachability system)."""
    pruned, report = prune_reducible(model)
    system = build_reachability_system(pruned)
    return pruned, report, system


def run_reduce(model: Ctmc, horizon: float, eps_max: float, r: int | None = None) -> dict:
    """Reduce and summarise (order, decay rate, coefficient, bound at T)."""
    pruned, report, system = analyze_ctmc(model)
    reduced = reduce_ctmc(system, horizon, eps_max, r=r)
    bound = float(reduced.envelope.eval(horizon))
    # bounds below accumulated roundoff count as met (exact lumpings certify
    # coefficients of order 1e-16 that float arithmetic cannot prove to be 0)
    met = bound <= eps_max + 1e-10 * (1.0 + eps_max)
    return {
        "m": system.m,
        "r": reduced.r,
        "kappa": reduced.envelope.kappa,
        "coeff": reduced.envelope.coeff,
        "coeff_gamma": reduced.envelope.coeff_gamma,
        "bound_at_T": bound,
        "tolerance_met": bool(met),
        "removed_states": sorted(
            set().union(*report.removed_bsccs) | set(report.removed_unreachable)
        )
        if not report.is_trivial
        else [],
        "reduced": reduced,
        "system": system,
    }


def run_solve(
    model: Ctmc,
    horizon: float,
    eps_max: float = 0.0,
    r: int | None = None,
    n_points: int = 200,
) -> dict:
    """Reduce then evaluate the certified solution on a log-spaced grid."""
    summary = run_reduce(model, horizon, eps_max, r=r)
    times = default_grid(horizon, n_points)
    result = solve_reduced(summary["system"], summary["reduced"], times)
    summary["solve_result"] = result
    summary["csv"] = result.to_csv()
    return summary


def run_synthesize(
    model: Ctmdp,
    horizon: float,
    eps_max: float,
    tau: float,
    delta: float | None = None,
    n_points: int = 200,
    common_identity_m: bool | None = None,
) -> dict:
    """Reduce the CTMDP, synthesise a dwell-time policy, emit policy + band CSV."""
    sys = reduce_ctmdp(model, horizon, eps_max, tau, common_identity_m=common_identity_m)
    synth = synthesize_policy(sys, horizon, tau, delta=delta)
    policy = synth.policy
    times = default_grid(horizon, n_points)
    probs, bounds = _policy_band(sys, policy, times, horizon)
    band_lines = ["t,prob,eps"]
    for t, pr, ep in zip(times, probs, bounds):
        band_lines.append(f"{t:.12g},{pr:.12g},{ep:.12g}")
    note = (
        f"tau={tau:.12g} delta={synth.delta:.12g} r={max(sys.r_eff)} "
        f"bound={sys.bound_at_horizon:.12g}"
    )
    argmax_lines = ["t," + ",".join(f"argmax_{i}" for i in range(sys.c_s.shape[0]))]
    for t, row in synth.argmax_table:
        argmax_lines.append(f"{t:.12g}," + ",".join(str(v) for v in row))
    return {
        "switched": sys,
        "policy": policy,
        "r": max(sys.r_eff),
        "bound": sys.bound_at_horizon,
        "tolerance_met": sys.tolerance_met,
        "policy_csv": policy.to_csv(note),
        "band_csv": "\n".join(band_lines) + "\n",
        "argmax_csv": "\n".join(argmax_lines) + "\n",
    }


def _policy_band(sys, policy: PiecewisePolicy, times, horizon):
    """Reduced reachability estimate plus certified bound along a policy."""
    import scipy.linalg as sla

    d_curr = policy.segments[0][1]
    xbar = sys.x_bar0_list[d_curr].copy()
    seeds = [
        error_seeds(sys, d0, d1)
        for d0 in range(sys.n_decisions)
        for d1 in range(sys.n_decisions)
    ]
    eps0 = max(s[0] for s in seeds)
    eps_bar0 = max(s[1] for s in seeds)
    n_total = max(len(policy.segments) - 1, 0)
    rec = error_recursion(sys, policy.dwell_tau, n_total, eps0, eps_bar0)

    probs = np.empty(len(times))
    bounds = np.empty(len(times))
    t_curr = 0.0
    seg_iter = list(policy.segments[1:]) + [(float("inf"), -1)]
    seg_idx = 0
    n_done = 0
    t_last = 0.0
    for k, t in enumerate(times):
        while seg_iter[seg_idx][0] <= t:
            start, dec = seg_iter[seg_idx]
            xbar = sla.expm(sys.a_bar_list[d_curr] * (start - t_curr)) @ xbar
            xbar = jump_reset(sys, d_curr, dec, xbar)
            d_curr = dec
            t_curr = start
            n_done += 1
            t_last = start
            seg_idx += 1
        xbar_t = sla.expm(sys.a_bar_list[d_curr] * (t - t_curr)) @ xbar
        steady = sys.steady_list[d_curr]
        w_est = sys.p_list[d_curr] @ xbar_t - steady
        probs[k] = float(np.clip(np.sum(sys.c_s @ w_est), 0.0, 1.0))
        bounds[k] = bound_at_horizon(rec.eps[n_done], sys.kappa, t, t_last)
    return probs, bounds


# ---------------------------------------------------------------------------
# runtime benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchConfig:
    """State-count sweep configuration for the runtime comparison."""

    kind: str = "random"
    sizes: tuple[int, ...] = (100, 200, 500)
    horizon: float = 5.0
    eps_max: float = 0.01
    trunc_tol: float = 0.01
    seed: int = 1
    reps: int = 5
    density: float = 1.0

    def __post_init__(self):
        if self.kind not in ("random",):
            raise CtreachError("invalid-input", f"unsupported bench kind {self.kind!r}")
        if self.reps < 5:
            raise CtreachError("invalid-input", "bench needs >= 5 repetitions")
        if not (0 < self.eps_max < 1):
            raise CtreachError("invalid-input", "eps_max must lie in (0, 1)")


@dataclass(frozen=True)
class RuntimeRecord:
    n_states: int
    wall_time_uniformization: float
    wall_time_symbolic_full: float
    wall_time_symbolic_reduced: float
    r_chosen: int
    bound_at_T: float

    @staticmethod
    def csv_header() -> str:
        return (
            "n_states,wall_time_uniformization,wall_time_symbolic_full,"
            "wall_time_symbolic_reduced,r_chosen,bound_at_T"
        )

    def to_csv_row(self) -> str:
        return (
            f"{self.n_states},{self.wall_time_uniformization:.6g},"
            f"{self.wall_time_symbolic_full:.6g},{self.wall_time_symbolic_reduced:.6g},"
            f"{self.r_chosen},{self.bound_at_T:.6g}"
        )


def _time_symbolic_full(system, horizon: float) -> tuple[float, float]:
    t0 = time.perf_counter()
    factors = real_schur(system.a)
    x0 = system.x0()
    xbar0 = factors.u.T @ x0
    traj = expsum_action(factors.n, xbar0, np.array([horizon]))
    vals = system.offset_d + (system.c_s @ factors.u) @ traj[:, 0]
    return time.perf_counter() - t0, float(vals[0])


def _time_symbolic_reduced(system, horizon: float, eps_max: float):
    t0 = time.perf_counter()
    reduced = reduce_ctmc(system, horizon, eps_max)
    traj = expsum_action(reduced.a_bar, reduced.x_bar0, np.array([horizon]))
    vals = reduced.offset_d + reduced.c_bar @ traj[:, 0]
    dt = time.perf_counter() - t0
    return dt, float(vals[0]), reduced.r, float(reduced.envelope.eval(horizon))


def run_bench(config: BenchConfig) -> dict:
    """Median wall times of the three solution paths across a size sweep.

    The baseline and both symbolic paths solve the same task (reachability at
    the time bound for the tracked states, certified to ``trunc_tol`` /
    ``eps_max``).  The first repetition set is preceded by a small warm-up run
    that is not timed.
    """
    # warm-up: exercise all code paths once on a small instance
    warm = build_random_generator(12, config.seed)
    warm_sys = build_reachability_system(warm)
    uniformization_solve(full_generator(warm), warm.good, warm.target_rows, 1.0)
    _time_symbolic_full(warm_sys, 1.0)
    _time_symbolic_reduced(warm_sys, 1.0, config.eps_max)

    records = []
    consistency = []
    for n in config.sizes:
        tu, ts, tsr, rs, bounds = [], [], [], [], []
        for rep in range(config.reps):
            model = build_random_generator(n, config.seed + rep, config.density)
            system = build_reachability_system(model)
            q = full_generator(model)

            t0 = time.perf_counter()
            unif = uniformization_solve(
                q, model.good, model.target_rows, config.horizon, config.trunc_tol
            )
            tu.append(time.perf_counter() - t0)

            dt_full, val_full = _time_symbolic_full(system, config.horizon)
            ts.append(dt_full)

            dt_red, val_red, r_chosen, bound = _time_symbolic_reduced(
                system, config.horizon, config.eps_max
            )
            tsr.append(dt_red)
            rs.append(r_chosen)
            bounds.append(bound)
            consistency.append(
                abs(val_red - float(unif.values[0])) <= bound + config.trunc_tol + 1e-9
            )
        records.append(
            RuntimeRecord(
                n_states=n,
                wall_time_uniformization=float(np.median(tu)),
                wall_time_symbolic_full=float(np.median(ts)),
                wall_time_symbolic_reduced=float(np.median(tsr)),
                r_chosen=int(rs[0]),
                bound_at_T=float(bounds[0]),
            )
        )
    csv = "\n".join([RuntimeRecord.csv_header()] + [r.to_csv_row() for r in records]) + "\n"
    return {"records": records, "csv": csv, "consistent": all(consistency)}
