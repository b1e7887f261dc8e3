"""Markov model representation, validation, and reachability-system extraction.

A CTMC is stored as a sparse nonnegative rate matrix with a designated ``good``
state (and optionally ``bad``).  Reachability analysis works on the partitioned
generator

    Q = [[A, chi, beta], [0, 0, 0]]

where ``A`` is the generator restricted to the transient states, ``beta`` holds
the rates into ``good`` and ``chi`` the rates into ``bad``.  The translated
dynamics ``dX/dt = A X`` with ``X(0) = A^{-1} beta`` yields the reachability
probabilities as ``C_S X(t) + d`` with offset ``d = -C_S A^{-1} beta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import CtreachError, ModelFormatError

__all__ = [
    "Ctmc",
    "Ctmdp",
    "ReachabilitySystem",
    "PreprocessReport",
    "Assumption1Result",
    "build_reachability_system",
    "build_switched_partition",
    "check_assumption1",
    "full_generator",
    "parse_model",
    "format_model",
    "prune_reducible",
    "uniformize",
]


@dataclass(frozen=True)
class Ctmc:
    """Continuous-time Markov chain with designated good/bad states.

    Parameters
    ----------
    n_states : int
        Total number of states (including good and bad).
    rates : scipy.sparse.csr_matrix
        Nonnegative off-diagonal rate matrix with zero diagonal; exit rates are
        derived as row sums.
    good : int
        Index of the goal state.
    bad : int or None
        Index of the avoid state, if any.
    target_rows : tuple of int
        Ordered subset S0 of non-good/bad states whose reachability values are
        tracked (defaults to all transient states).
    """

    n_states: int
    rates: sp.csr_matrix
    good: int
    bad: int | None = None
    target_rows: tuple[int, ...] = ()

    def __post_init__(self):
        if self.n_states < 1:
            raise CtreachError("invalid-model", "model needs at least one state")
        if self.rates.shape != (self.n_states, self.n_states):
            raise CtreachError("invalid-model", "rate matrix shape mismatch")
        if self.rates.nnz and self.rates.data.min() < 0:
            raise CtreachError("invalid-model", "negative rate entry")
        if np.any(self.rates.diagonal() != 0):
            raise CtreachError("invalid-model", "rate matrix must have zero diagonal")
        if not (0 <= self.good < self.n_states):
            raise CtreachError("invalid-model", f"good index {self.good} out of range")
        if self.bad is not None:
            if not (0 <= self.bad < self.n_states):
                raise CtreachError("invalid-model", f"bad index {self.bad} out of range")
            if self.bad == self.good:
                raise CtreachError("invalid-model", "good and bad must differ")
        absorbing = {self.good} | ({self.bad} if self.bad is not None else set())
        rows = self.target_rows or tuple(
            i for i in range(self.n_states) if i not in absorbing
        )
        for i in rows:
            if i in absorbing or not (0 <= i < self.n_states):
                raise CtreachError("invalid-model", f"target row {i} invalid")
        object.__setattr__(self, "target_rows", tuple(rows))

    @property
    def transient_states(self) -> tuple[int, ...]:
        absorbing = {self.good} | ({self.bad} if self.bad is not None else set())
        return tuple(i for i in range(self.n_states) if i not in absorbing)


@dataclass(frozen=True)
class Ctmdp:
    """CTMDP given as one rate matrix per decision vector."""

    n_states: int
    decisions: tuple[str, ...]
    rates_per_decision: tuple[sp.csr_matrix, ...]
    good: int
    bad: int | None = None
    target_rows: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.decisions) != len(self.rates_per_decision):
            raise CtreachError("invalid-model", "decision/rate-matrix count mismatch")
        if not self.decisions:
            raise CtreachError("invalid-model", "CTMDP needs at least one decision")
        rows = None
        for d, rates in zip(self.decisions, self.rates_per_decision):
            chain = Ctmc(
                n_states=self.n_states,
                rates=rates,
                good=self.good,
                bad=self.bad,
                target_rows=self.target_rows,
            )
            rows = chain.target_rows
        object.__setattr__(self, "target_rows", rows)

    def as_ctmc(self, decision: int) -> Ctmc:
        return Ctmc(
            n_states=self.n_states,
            rates=self.rates_per_decision[decision],
            good=self.good,
            bad=self.bad,
            target_rows=self.target_rows,
        )

    @property
    def transient_states(self) -> tuple[int, ...]:
        return self.as_ctmc(0).transient_states


@dataclass(frozen=True)
class ReachabilitySystem:
    """Partitioned reachability dynamics of a CTMC.

    ``state_order`` maps positions in ``A`` back to original state indices; rows
    of ``[A | chi | beta]`` sum to zero.  ``H = A/gamma_unif + I`` is the
    uniformised nonnegative matrix used for spectral checks.
    """

    a: np.ndarray
    beta: np.ndarray
    chi: np.ndarray
    c_s: np.ndarray
    offset_d: np.ndarray
    gamma_unif: float
    h: np.ndarray
    state_order: tuple[int, ...]
    target_rows: tuple[int, ...]

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def m0(self) -> int:
        return self.c_s.shape[0]

    def x0(self) -> np.ndarray:
        """Translated initial state A^{-1} beta (entries in [-1, 0])."""
        return np.linalg.solve(self.a, self.beta)


@dataclass(frozen=True)
class PreprocessReport:
    """What :func:`prune_reducible` removed and kept."""

    removed_bsccs: tuple[frozenset[int], ...]
    removed_unreachable: frozenset[int]
    kept_states: tuple[int, ...]
    scc_order: tuple[frozenset[int], ...]

    @property
    def is_trivial(self) -> bool:
        return not self.removed_bsccs and not self.removed_unreachable


@dataclass(frozen=True)
class Assumption1Result:
    holds: bool
    reason: str | None = None


# ---------------------------------------------------------------------------
# model text format
# ---------------------------------------------------------------------------

def parse_model(text: str) -> Ctmc | Ctmdp:
    """Parse the line-oriented model format.

    ``ctmc <n>`` or ``ctmdp <n> <num_decisions>`` opens the model; ``good <i>``,
    optional ``bad <i>`` and ``target <i> [...]`` designate states; rate lines
    are ``rate <i> <j> <v>`` (CTMC) or ``rate <d> <i> <j> <v>`` (CTMDP) with
    0-based indices and v > 0.  ``#`` starts a comment.  Duplicate rate entries
    are summed.
    """
    kind = None
    n = 0
    num_decisions = 0
    good = None
    bad = None
    targets: list[int] = []
    entries: dict[int, dict[tuple[int, int], float]] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        try:
            if key in ("ctmc", "ctmdp"):
                if kind is not None:
                    raise ModelFormatError("duplicate model header", lineno)
                kind = key
                n = int(parts[1])
                num_decisions = int(parts[2]) if key == "ctmdp" else 1
                if n < 1 or num_decisions < 1:
                    raise ModelFormatError("nonpositive model size", lineno)
                entries = {d: {} for d in range(num_decisions)}
            elif kind is None:
                raise ModelFormatError("rate/state line before model header", lineno)
            elif key == "good":
                good = int(parts[1])
            elif key == "bad":
                bad = int(parts[1])
            elif key == "target":
                targets.extend(int(p) for p in parts[1:])
            elif key == "rate":
                if kind == "ctmc":
                    d, i, j, v = 0, int(parts[1]), int(parts[2]), float(parts[3])
                else:
                    d, i, j, v = int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4])
                if not (0 <= d < num_decisions):
                    raise ModelFormatError(f"decision {d} out of range", lineno)
                if not (0 <= i < n and 0 <= j < n):
                    raise ModelFormatError(f"state index out of range in {line!r}", lineno)
                if i == j:
                    raise ModelFormatError("self-loop rate not allowed", lineno)
                if v <= 0:
                    raise ModelFormatError(f"rate must be positive, got {v}", lineno)
                entries[d][(i, j)] = entries[d].get((i, j), 0.0) + v
            else:
                raise ModelFormatError(f"unknown directive {key!r}", lineno)
        except (IndexError, ValueError) as exc:
            raise ModelFormatError(f"cannot parse {line!r}: {exc}", lineno) from None

    if kind is None:
        raise ModelFormatError("missing model header")
    if good is None:
        raise ModelFormatError("missing 'good' directive")

    def to_csr(pairs: dict[tuple[int, int], float]) -> sp.csr_matrix:
        if pairs:
            ij = np.array(list(pairs.keys()), dtype=int)
            data = np.array(list(pairs.values()))
            return sp.csr_matrix((data, (ij[:, 0], ij[:, 1])), shape=(n, n))
        return sp.csr_matrix((n, n))

    if kind == "ctmc":
        return Ctmc(n, to_csr(entries[0]), good, bad, tuple(targets))
    return Ctmdp(
        n,
        tuple(str(d) for d in range(num_decisions)),
        tuple(to_csr(entries[d]) for d in range(num_decisions)),
        good,
        bad,
        tuple(targets),
    )


def format_model(model: Ctmc | Ctmdp) -> str:
    """Serialize a model back into the text format (round-trips with parse)."""
    lines = []
    if isinstance(model, Ctmc):
        lines.append(f"ctmc {model.n_states}")
        mats = [model.rates]
    else:
        lines.append(f"ctmdp {model.n_states} {len(model.decisions)}")
        mats = list(model.rates_per_decision)
    lines.append(f"good {model.good}")
    if model.bad is not None:
        lines.append(f"bad {model.bad}")
    lines.append("target " + " ".join(str(i) for i in model.target_rows))
    for d, mat in enumerate(mats):
        coo = mat.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            if isinstance(model, Ctmc):
                lines.append(f"rate {i} {j} {float(v)!r}")
            else:
                lines.append(f"rate {d} {i} {j} {float(v)!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# generator partition
# ---------------------------------------------------------------------------

def full_generator(model: Ctmc) -> np.ndarray:
    """Dense infinitesimal generator with good/bad made absorbing."""
    q = model.rates.toarray().astype(float)
    q[model.good, :] = 0.0
    if model.bad is not None:
        q[model.bad, :] = 0.0
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def build_reachability_system(model: Ctmc) -> ReachabilitySystem:
    """Extract the partitioned system (A, beta, chi, C_S, d) from a CTMC.

    Good and bad are made absorbing; transient states keep their input order.
    Raises ``trivial-problem`` when no transient state reaches good or bad in
    one step, and ``assumption-violated`` when A is singular (possible only if
    Assumption 1 fails and preprocessing was skipped).
    """
    q = full_generator(model)
    transient = list(model.transient_states)
    if not transient:
        raise CtreachError("trivial-problem", "no transient states")
    idx = np.array(transient)
    a = q[np.ix_(idx, idx)]
    beta = q[idx, model.good]
    chi = (
        q[idx, model.bad] if model.bad is not None else np.zeros(len(idx))
    )
    if not np.any(beta + chi > 0):
        raise CtreachError(
            "trivial-problem", "no transition from transient states into good or bad"
        )
    pos = {s: k for k, s in enumerate(transient)}
    c_s = np.zeros((len(model.target_rows), len(idx)))
    for row, s in enumerate(model.target_rows):
        c_s[row, pos[s]] = 1.0
    h, gamma = _uniformize(a)
    try:
        y = np.linalg.solve(a, beta)
    except np.linalg.LinAlgError:
        raise CtreachError("assumption-violated", "A is singular") from None
    if not np.all(np.isfinite(y)):
        raise CtreachError("assumption-violated", "A is numerically singular")
    offset_d = -c_s @ y
    return ReachabilitySystem(
        a=a,
        beta=beta,
        chi=chi,
        c_s=c_s,
        offset_d=offset_d,
        gamma_unif=gamma,
        h=h,
        state_order=tuple(transient),
        target_rows=model.target_rows,
    )


def _uniformize(a: np.ndarray) -> tuple[np.ndarray, float]:
    gamma = float(np.abs(np.diag(a)).max()) if a.size else 0.0
    if gamma <= 0.0:
        raise CtreachError("degenerate-generator", "A has an all-zero diagonal")
    h = a / gamma + np.eye(a.shape[0])
    return h, gamma


def uniformize(system: ReachabilitySystem) -> tuple[np.ndarray, float]:
    """Return (H, gamma) with H = A/gamma + I nonnegative and sub-stochastic."""
    return _uniformize(system.a)


def check_assumption1(system: ReachabilitySystem) -> Assumption1Result:
    """Check irreducibility of H (exact zero pattern) and beta + chi != 0."""
    pattern = sp.csr_matrix((system.h > 0.0).astype(np.int8))
    n_comp, _ = connected_components(pattern, directed=True, connection="strong")
    if n_comp != 1:
        return Assumption1Result(False, "not-strongly-connected")
    if not np.any(system.beta + system.chi > 0):
        return Assumption1Result(False, "no-exit")
    return Assumption1Result(True)


# ---------------------------------------------------------------------------
# reducible-chain preprocessing
# ---------------------------------------------------------------------------

def prune_reducible(model: Ctmc) -> tuple[Ctmc, PreprocessReport]:
    """Remove BSCCs other than {good} and states that never reach good.

    Transitions into removed states are redirected into ``bad`` (created if the
    model has none), which preserves the reachability probability into good for
    every retained state at every time bound.  The pruned chain's ``A`` block is
    stable (all retained states reach good).
    """
    q_pattern = model.rates.tocsr().copy()
    # good/bad absorbing for the structural analysis
    mask = np.ones(model.n_states, dtype=bool)
    graph = q_pattern.tolil()
    graph.rows[model.good] = []
    graph.data[model.good] = []
    if model.bad is not None:
        graph.rows[model.bad] = []
        graph.data[model.bad] = []
    graph = graph.tocsr()
    pattern = sp.csr_matrix((graph > 0).astype(np.int8))
    n_comp, labels = connected_components(pattern, directed=True, connection="strong")

    # which components reach good's component (reverse BFS over the condensation)
    comp_edges: set[tuple[int, int]] = set()
    coo = pattern.tocoo()
    for i, j in zip(coo.row, coo.col):
        ci, cj = labels[i], labels[j]
        if ci != cj:
            comp_edges.add((ci, cj))
    good_comp = labels[model.good]
    reaches_good = {good_comp}
    changed = True
    while changed:
        changed = False
        for ci, cj in comp_edges:
            if cj in reaches_good and ci not in reaches_good:
                reaches_good.add(ci)
                changed = True

    comp_members: dict[int, list[int]] = {}
    for s in range(model.n_states):
        comp_members.setdefault(labels[s], []).append(s)
    has_outgoing = {ci for ci, _ in comp_edges}

    absorbing = {model.good} | ({model.bad} if model.bad is not None else set())
    removed_bsccs: list[frozenset[int]] = []
    removed_unreachable: set[int] = set()
    kept: list[int] = []
    for s in model.transient_states:
        c = labels[s]
        if c in reaches_good:
            kept.append(s)
        elif c not in has_outgoing:
            pass  # member of a trapped BSCC, collected below
        else:
            removed_unreachable.add(s)
    for c, members in comp_members.items():
        if c in reaches_good or c in has_outgoing:
            continue
        members_t = [s for s in members if s not in absorbing]
        if members_t:
            removed_bsccs.append(frozenset(members_t))

    if not kept:
        raise CtreachError("empty-problem", "good is unreachable from every state")

    removed = set().union(*removed_bsccs) if removed_bsccs else set()
    removed |= removed_unreachable
    if not removed:
        report = PreprocessReport(
            removed_bsccs=(),
            removed_unreachable=frozenset(),
            kept_states=tuple(kept),
            scc_order=_scc_topo_order(kept, labels, comp_edges, comp_members),
        )
        return model, report

    # rebuild: kept transient states, then bad sink (created if needed), then good
    new_states = list(kept) + ([model.bad] if model.bad is not None else []) + [model.good]
    old_to_new = {s: k for k, s in enumerate(new_states)}
    n_new = len(new_states) + (0 if model.bad is not None else 1)
    new_good = old_to_new[model.good]
    new_bad = old_to_new[model.bad] if model.bad is not None else n_new - 1

    coo = model.rates.tocoo()
    pairs: dict[tuple[int, int], float] = {}
    kept_set = set(kept)
    for i, j, v in zip(coo.row, coo.col, coo.data):
        if i not in kept_set:
            continue  # rows from removed/absorbing states are dropped
        key = (old_to_new[i], old_to_new.get(j, new_bad))
        if key[0] != key[1]:
            pairs[key] = pairs.get(key, 0.0) + v
    ij = np.array(list(pairs.keys()), dtype=int)
    data = np.array(list(pairs.values()))
    rates = sp.csr_matrix((data, (ij[:, 0], ij[:, 1])), shape=(n_new, n_new))
    new_targets = tuple(old_to_new[s] for s in model.target_rows if s in old_to_new)
    if not new_targets:
        new_targets = tuple(old_to_new[s] for s in kept)
    pruned = Ctmc(
        n_states=n_new,
        rates=rates,
        good=new_good,
        bad=new_bad,
        target_rows=new_targets,
    )
    report = PreprocessReport(
        removed_bsccs=tuple(removed_bsccs),
        removed_unreachable=frozenset(removed_unreachable),
        kept_states=tuple(kept),
        scc_order=_scc_topo_order(kept, labels, comp_edges, comp_members),
    )
    return pruned, report


def _scc_topo_order(kept, labels, comp_edges, comp_members):
    kept_set = set(kept)
    comps = sorted({labels[s] for s in kept})
    indeg = {c: 0 for c in comps}
    out: dict[int, list[int]] = {c: [] for c in comps}
    for ci, cj in comp_edges:
        if ci in indeg and cj in indeg:
            out[ci].append(cj)
            indeg[cj] += 1
    queue = sorted(c for c, d in indeg.items() if d == 0)
    order = []
    while queue:
        c = queue.pop(0)
        order.append(c)
        for cj in sorted(out[c]):
            indeg[cj] -= 1
            if indeg[cj] == 0:
                queue.append(cj)
    return tuple(
        frozenset(s for s in comp_members[c] if s in kept_set) for c in order
    )


# ---------------------------------------------------------------------------
# CTMDP partition
# ---------------------------------------------------------------------------

def build_switched_partition(
    model: Ctmdp,
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per-decision (A_d, beta_d, chi_d) with every A_d verified stable."""
    out = []
    for d in range(len(model.decisions)):
        system = build_reachability_system(model.as_ctmc(d))
        margin = np.max(np.linalg.eigvals(system.a).real)
        if margin >= 0.0:
            raise CtreachError(
                "assumption-violated",
                f"A_d for decision {model.decisions[d]!r} is not stable "
                f"(max Re eigenvalue {margin:.3g})",
            )
        out.append((system.a, system.beta, system.chi))
    return out
