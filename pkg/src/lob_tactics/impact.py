"""Long-run expected mid-price move after execution.

The book race between the two best queues is an absorbing chain at frozen
price; its hitting probabilities combined with the regeneration law give the
expected move accumulated over successive depletions.  Antisymmetry under the
bid-ask mirror folds the fixed point onto states with ``q1 >= q2`` and makes
the linear system well posed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .generator import market_order_outcomes
from .model import (ASK, BID, AgentState, IntensityModel, ModelConfig, ModelError,
                    RegenerationLaw)

_SYM_TOL = 1e-9


@dataclass
class DepletionRace:
    """Absorbing-chain data for the first-depletion race at frozen price.

    ``boundary='capped'`` keeps the model's insertion caps (conservative rows,
    certain absorption).  ``boundary='free'`` extends constant rates across
    the whole grid, which is the convention under which the closed-form
    eigensystem of the constant-rate race is exact; probability can then leak
    through the top of the grid.
    """

    qmax: int
    states: list                      # transient (q1, q2), level-major
    index: dict = field(repr=False)
    Qstar: np.ndarray = None          # (n, n) transient rates, diagonal conservative
    z1: np.ndarray = None             # (n, n_abs) absorption rates
    labels: list = None               # absorbing labels (side, pre_q1, pre_q2)
    boundary: str = "capped"
    constants: tuple | None = None    # (lam_p1, lam_m1, lam_p2, lam_m2) when constant

    @property
    def n_transient(self) -> int:
        return len(self.states)

    def absorption_rate(self) -> np.ndarray:
        return self.z1.sum(axis=1)

    def row_defect(self) -> float:
        """Max |transient row sum + absorption rate|; 0 for capped models."""
        return float(np.max(np.abs(self.Qstar.sum(axis=1) + self.absorption_rate())))


def build_depletion_race(model: IntensityModel, boundary: str = "capped") -> DepletionRace:
    """Assemble the race matrix over (q1, q2) in [1, qmax]^2.

    Absorbing columns are labelled by the depleted side and the state the
    depletion started from, which is what the regeneration law conditions on.
    """
    if boundary not in ("capped", "free"):
        raise ModelError(f"unknown boundary mode {boundary!r}")
    qmax = model.qmax
    n = qmax * qmax
    states = [(q1, q2) for q1 in range(1, qmax + 1) for q2 in range(1, qmax + 1)]
    index = {s: i for i, s in enumerate(states)}

    constants = None
    if model.is_constant() and model.n_max == 1:
        constants = (float(model.bid_plus[1, 1, 1]),
                     float(model.bid_cancel[1, 1, 1] + model.bid_market[1, 1, 1]),
                     float(model.ask_plus[1, 1, 1]),
                     float(model.ask_cancel[1, 1, 1] + model.ask_market[1, 1, 1]))
    if boundary == "free" and constants is None:
        raise ModelError("free-boundary race needs constant unit-jump rates")

    Q = np.zeros((n, n))
    labels: list = []
    label_idx: dict = {}
    cols: list[list] = []

    def abs_col(label) -> int:
        j = label_idx.get(label)
        if j is None:
            j = len(labels)
            label_idx[label] = j
            labels.append(label)
            cols.append([])
        return j

    for (q1, q2) in states:
        i = index[(q1, q2)]
        tot = 0.0
        for side in (BID, ASK):
            own = q1 if side == BID else q2
            for sz in range(1, model.n_max + 1):
                if boundary == "free":
                    rp = constants[0] if side == BID else constants[2]
                    rm = constants[1] if side == BID else constants[3]
                    if sz > 1:
                        rp = rm = 0.0
                else:
                    rp = model.lam_plus(side, (q1, q2), sz)
                    rm = model.lam_minus(side, (q1, q2), sz)
                if rp > 0.0:
                    tot += rp
                    tgt = (q1 + sz, q2) if side == BID else (q1, q2 + sz)
                    if tgt in index:
                        Q[i, index[tgt]] += rp
                    # otherwise the flow leaves the truncated grid (free mode)
                if rm > 0.0:
                    tot += rm
                    if sz >= own:
                        j = abs_col((side, q1, q2))
                        cols[j].append((i, rm))
                    else:
                        tgt = (q1 - sz, q2) if side == BID else (q1, q2 - sz)
                        Q[i, index[tgt]] += rm
        Q[i, i] -= tot

    z1 = np.zeros((n, len(labels)))
    for j, entries in enumerate(cols):
        for (i, r) in entries:
            z1[i, j] += r

    race = DepletionRace(qmax=qmax, states=states, index=index, Qstar=Q, z1=z1,
                         labels=labels, boundary=boundary, constants=constants)
    if boundary == "capped":
        _require_certain_absorption(race)
    return race


def _require_certain_absorption(race: DepletionRace) -> None:
    """Every transient state must be able to reach a depletion."""
    n = race.n_transient
    can = race.absorption_rate() > 0.0
    adj = race.Qstar > 0.0
    np.fill_diagonal(adj, False)
    frontier = can.copy()
    while frontier.any():
        nxt = adj[:, frontier].any(axis=1) & ~can
        if not nxt.any():
            break
        can |= nxt
        frontier = nxt
    if not can.all():
        bad = [race.states[i] for i in np.nonzero(~can)[0][:5]]
        raise ModelError(f"absorption is not certain; unreachable from states {bad}")


@dataclass
class HittingProbabilities:
    """Probability, per start state, of each (side, pre-depletion state) exit."""

    race: DepletionRace
    matrix: np.ndarray            # (n_transient, n_abs)

    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def side_total(self, side: int) -> np.ndarray:
        mask = np.array([lab[0] == side for lab in self.race.labels])
        return self.matrix[:, mask].sum(axis=1)

    def with_absorbing_rows(self) -> np.ndarray:
        """Stack identity rows for chains started in an exit state."""
        n_abs = len(self.race.labels)
        return np.vstack([np.eye(n_abs), self.matrix])


def hitting_probabilities(race: DepletionRace) -> HittingProbabilities:
    """Solve the absorbing-chain linear system for the exit distribution."""
    try:
        R = np.linalg.solve(race.Qstar, -race.z1)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(race.Qstar)
        raise ModelError(f"race matrix is singular (cond estimate {cond:.3e}); "
                         "is absorption certain from every state?") from exc
    if race.boundary == "capped":
        defect = float(np.max(np.abs(R.sum(axis=1) - 1.0)))
        if defect > 1e-8:
            raise ModelError(f"hitting rows sum to 1 +- {defect:.2e}; model ill posed")
    return HittingProbabilities(race=race, matrix=R)


@dataclass
class ImpactSolution:
    """Expected long-run mid move per book state, in ticks, at zero offset.

    ``drift`` is antisymmetric under the bid-ask mirror by construction:
    ``drift[q1, q2] == -drift[q2, q1]``, zero on the diagonal.
    """

    qmax: int
    drift: np.ndarray             # (qmax+1, qmax+1), index [q1, q2], row/col 0 unused
    first_move: np.ndarray        # expected move accumulated at the first redraw
    regen_transition: np.ndarray  # state distribution right after the first redraw
    fold_matrix: np.ndarray
    fold_source: np.ndarray
    fold_states: list
    residual: float
    condition: float
    regen: RegenerationLaw = field(repr=False, default=None)

    def drift_at(self, q1: int, q2: int) -> float:
        return float(self.drift[min(q1, self.qmax), min(q2, self.qmax)])


def impact_fixed_point(race: DepletionRace, regen: RegenerationLaw,
                       hitting: HittingProbabilities | None = None) -> ImpactSolution:
    """Solve for the expected long-run move via the folded linear system."""
    if race.boundary != "capped":
        raise ModelError("the long-run move needs the conservative (capped) race")
    if regen.qmax != race.qmax:
        raise ModelError("regeneration law and race disagree on the queue cap")
    if not regen.symmetric and regen.symmetry_violation() > _SYM_TOL:
        raise ModelError("the folded solve needs a mirror-symmetric regeneration law; "
                         "symmetrize the calibrated law first")
    if hitting is None:
        hitting = hitting_probabilities(race)

    n = race.n_transient
    states = race.states
    index = race.index
    qmax = race.qmax

    # expected move at the first redraw, and the post-redraw state distribution
    first_move = np.zeros(n)
    P = np.zeros((n, n))
    for j, (side, p1, p2) in enumerate(race.labels):
        w = hitting.matrix[:, j]
        first_move += w * regen.mean_move(side, p1, p2)
        q1s, q2s, _dps, ps = regen.outcomes(side, p1, p2)
        for a, b, pr in zip(q1s, q2s, ps):
            if pr > 0.0:
                P[:, index[(int(a), int(b))]] += w * float(pr)

    sym = np.array([index[(q2, q1)] for (q1, q2) in states])
    mirror_defect = max(float(np.max(np.abs(first_move + first_move[sym]))),
                        float(np.max(np.abs(P - P[np.ix_(sym, sym)]))))
    if mirror_defect > 1e-8:
        raise ModelError(f"race/redraw data break the bid-ask mirror by {mirror_defect:.2e}; "
                         "the folded solve needs a symmetric model")
    dom = [i for i, (q1, q2) in enumerate(states) if q1 > q2]
    dom_pos = {i: k for k, i in enumerate(dom)}
    m = len(dom)

    denom = 1.0 - (np.diag(P) - P[np.arange(n), sym])
    if np.any(denom <= 0.0):
        raise ModelError("the redraw keeps the state with too much mass; "
                         "the folded system is not solvable")

    A = np.zeros((m, m))
    F = np.zeros(m)
    for r, i in enumerate(dom):
        F[r] = first_move[i] / denom[i]
        for k in dom:
            if k == i:
                continue
            A[r, dom_pos[k]] = (P[i, k] - P[i, sym[k]]) / denom[i]
    try:
        d_dom = np.linalg.solve(np.eye(m) - A, F)
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"folded system singular; cond = {np.linalg.cond(np.eye(m) - A):.3e}"
                         ) from exc
    condition = float(np.linalg.cond(np.eye(m) - A)) if m else 1.0

    drift = np.zeros((qmax + 1, qmax + 1))
    for r, i in enumerate(dom):
        q1, q2 = states[i]
        drift[q1, q2] = d_dom[r]
        drift[q2, q1] = -d_dom[r]

    d_full = np.array([drift[q1, q2] for (q1, q2) in states])
    residual = float(np.max(np.abs(d_full - (first_move + P @ d_full))))

    return ImpactSolution(qmax=qmax, drift=drift, first_move=first_move,
                          regen_transition=P, fold_matrix=A, fold_source=F,
                          fold_states=[states[i] for i in dom], residual=residual,
                          condition=condition, regen=regen)


# ---------------------------------------------------------------------------
# payoff of an executed or liquidating position


def terminal_payoff_g(state: AgentState, impact: ImpactSolution, cfg: ModelConfig) -> float:
    """Benchmark-relative value of the position if liquidated now.

    Executed states are valued at the long-run mid less the accumulated cost.
    Unexecuted states are valued through an immediate market order, with the
    payoff wrapper applied outside the redraw average.
    """
    qa = cfg.order_size
    if state.inv == 0:
        inner = qa * (state.p + impact.drift_at(state.q1, state.q2)) * cfg.tick - state.p_exec
        return float(cfg.payoff(inner))
    outcomes = market_order_outcomes(state, cfg, impact.regen)
    pe_after = outcomes[0][0].p_exec
    inner = -pe_after
    for (nxt, pr) in outcomes:
        inner += pr * qa * (nxt.p + impact.drift_at(nxt.q1, nxt.q2)) * cfg.tick
    return float(cfg.payoff(inner))


class PayoffCalculator:
    """Vector payoffs for an enumerated controlled system."""

    def __init__(self, impact: ImpactSolution, cfg: ModelConfig):
        self.impact = impact
        self.cfg = cfg

    def live_values(self, system) -> np.ndarray:
        ht = self.cfg.half_tick
        out = np.empty(system.n_states)
        for j in range(system.n_states):
            out[j] = terminal_payoff_g(system.agent_state(j, ht), self.impact, self.cfg)
        return out

    def fill_values(self, system) -> np.ndarray:
        qa = self.cfg.order_size
        qc1 = np.minimum(system.fill_q1, self.impact.qmax)
        qc2 = np.minimum(system.fill_q2, self.impact.qmax)
        inner = qa * (system.fill_p + self.impact.drift[qc1, qc2]) * self.cfg.tick \
            - system.fill_pe
        return np.asarray(self.cfg.payoff(inner), dtype=float)

    def fill_payoff_rate(self, system) -> np.ndarray:
        """Rate-weighted payoff of executing through each state's fill channel."""
        vals = self.fill_values(system) * system.fill_rate
        out = np.zeros(system.n_states)
        owner = np.repeat(np.arange(system.n_states), np.diff(system.fill_indptr))
        np.add.at(out, owner, vals)
        return out


# ---------------------------------------------------------------------------
# closed-form eigensystem for the constant-rate race


@dataclass
class SpectralDecomposition:
    """Eigensystem of the symmetrized constant-rate race matrix.

    The similarity transform is diagonal; the transformed matrix is a
    Kronecker sum of two symmetric tridiagonal Toeplitz blocks, whose
    eigenpairs are sines.
    """

    n: int
    a: float
    b: float
    beta: float
    symmetrizer: np.ndarray       # diagonal of the similarity transform
    race: DepletionRace = field(repr=False, default=None)

    def eigenvalue(self, k: int, j: int) -> float:
        c = math.pi / (self.n + 1)
        return self.a + 2.0 * self.b * math.cos(k * c) + 2.0 * self.beta * math.cos(j * c)

    def eigenvalues(self) -> np.ndarray:
        ks = np.arange(1, self.n + 1)
        c = math.pi / (self.n + 1)
        within = 2.0 * self.b * np.cos(ks * c)
        across = 2.0 * self.beta * np.cos(ks * c)
        return (self.a + across[:, None] + within[None, :]).ravel()

    def eigenvector(self, k: int, j: int, normalized: bool = True) -> np.ndarray:
        """Eigenvector of the symmetrized matrix, level-major like the race states."""
        r = np.arange(1, self.n + 1)
        c = math.pi / (self.n + 1)
        x = np.sin(r * k * c)
        v = np.sin(r * j * c)
        vec = np.kron(v, x)
        if normalized:
            vec = vec / ((self.n + 1) / 2.0)
        return vec

    def basis(self) -> np.ndarray:
        """Orthonormal eigenbasis, columns ordered (j, k) row-major."""
        r = np.arange(1, self.n + 1)
        c = math.pi / (self.n + 1)
        S = np.sin(np.outer(r, r) * c) * math.sqrt(2.0 / (self.n + 1))
        return np.kron(S, S)

    def reconstruct(self) -> np.ndarray:
        X = self.basis()
        lam = self.eigenvalues()
        sym = X @ (lam[:, None] * X.T)
        d = self.symmetrizer
        return sym * np.outer(d, 1.0 / d)

    def hitting_matrix(self) -> np.ndarray:
        """Exit-state probabilities through the eigensystem instead of a solve."""
        X = self.basis()
        lam = self.eigenvalues()
        d = self.symmetrizer
        rhs = -(X.T @ (self.race.z1 / d[:, None]))
        return d[:, None] * (X @ (rhs / lam[:, None]))


def spectral_from_constants(a: float, b: float, beta: float, n: int) -> SpectralDecomposition:
    """Parametric eigensystem of the symmetric block-Toeplitz matrix itself."""
    return SpectralDecomposition(n=n, a=a, b=b, beta=beta, symmetrizer=np.ones(n * n))


def spectral_fast_path(race: DepletionRace) -> SpectralDecomposition:
    """Closed-form eigensystem; only valid for the free-boundary constant race."""
    if race.constants is None:
        raise ModelError("the spectral path needs constant unit-jump rates")
    if race.boundary != "free":
        raise ModelError("the closed-form eigensystem matches the free-boundary race; "
                         "build the race with boundary='free'")
    lam_p1, lam_m1, lam_p2, lam_m2 = race.constants
    if min(lam_p1, lam_m1, lam_p2, lam_m2) <= 0.0:
        raise ModelError("the symmetrizer needs strictly positive constant rates")
    n = race.qmax
    a = -(lam_p1 + lam_m1 + lam_p2 + lam_m2)
    b = math.sqrt(lam_p2 * lam_m2)
    beta = math.sqrt(lam_p1 * lam_m1)

    lvl_ratio = lam_m1 / lam_p1 if lam_p1 > 0 else 1.0
    within_ratio = lam_m2 / lam_p2 if lam_p2 > 0 else 1.0
    d = np.empty(n * n)
    for q1 in range(1, n + 1):
        for q2 in range(1, n + 1):
            d[(q1 - 1) * n + (q2 - 1)] = (lvl_ratio ** ((q1 - 1) / 2.0)
                                          * within_ratio ** ((q2 - 1) / 2.0))
    return SpectralDecomposition(n=n, a=a, b=b, beta=beta, symmetrizer=d, race=race)
