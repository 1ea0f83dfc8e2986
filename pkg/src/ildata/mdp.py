"""Exact state-visitation and distribution-shift computations on tabular MDPs.

Used to check two bounds numerically:

* the horizon bound: KL between horizon-averaged visitations of a learned
  and an expert policy is at most
  (1/H) sum_{t=0}^{H-1} (H - t) E_{s ~ rho_A^t}[KL(pi_A(.|s), pi_E(.|s))];
* the per-step support bound: if KL(pi_A(.|s), pi_E(.|s)) <= beta on the
  expert's step-t support, the expected step-t policy KL under the learned
  visitation is at most beta on that support plus the raw KL off it.

All divergences use the natural log.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

HOLDS_TOL = 1e-9
_SUM_TOL = 1e-12


@dataclass(frozen=True)
class TabularMDP:
    transition: np.ndarray  # P[s, a, s']
    initial: np.ndarray
    horizon: int

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=np.float64)
        rho0 = np.asarray(self.initial, dtype=np.float64)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial", rho0)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > _SUM_TOL):
            raise ValueError("every transition row must be a probability distribution")
        if rho0.shape != (P.shape[0],) or np.any(rho0 < 0) or abs(rho0.sum() - 1.0) > _SUM_TOL:
            raise ValueError("initial must be a probability distribution over states")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True)
class TabularPolicy:
    probs: np.ndarray  # pi[s, a]

    def __post_init__(self):
        pi = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", pi)
        if pi.ndim != 2 or np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > _SUM_TOL):
            raise ValueError("policy rows must be probability distributions")


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    holds: bool
    slack: float
    per_step: tuple = field(default=(), repr=False)

    @classmethod
    def of(cls, lhs: float, rhs: float, per_step: tuple = ()) -> BoundReport:
        return cls(lhs, rhs, lhs <= rhs + HOLDS_TOL, rhs - lhs, per_step)


def _check_shapes(mdp: TabularMDP, *policies: TabularPolicy) -> None:
    for pi in policies:
        if pi.probs.shape != (mdp.n_states, mdp.n_actions):
            raise ValueError(
                f"policy shape {pi.probs.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})"
            )


def state_marginals(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    """Array of shape (H + 1, S) holding rho^0 (the initial distribution) .. rho^H."""
    _check_shapes(mdp, policy)
    # state-to-state kernel under the policy: M[s, s'] = sum_a pi(a|s) P(s'|s,a)
    kernel = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    rho = np.empty((mdp.horizon + 1, mdp.n_states))
    rho[0] = mdp.initial
    for t in range(1, mdp.horizon + 1):
        rho[t] = rho[t - 1] @ kernel
    return rho


def visitation(mdp: TabularMDP, policy: TabularPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Per-step distributions rho^1..rho^H (shape (H, S)) and their average."""
    rho = state_marginals(mdp, policy)[1:]
    return rho, rho.mean(axis=0)


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats; ``math.inf`` when p puts mass where q has none."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return max(0.0, float(np.sum(p[mask] * np.log(p[mask] / q[mask]))))


def policy_kl(learned: TabularPolicy, expert: TabularPolicy) -> np.ndarray:
    """Per-state KL(pi_A(.|s) || pi_E(.|s))."""
    return np.array([kl_divergence(a, e) for a, e in zip(learned.probs, expert.probs)])


def quality_score(mdp: TabularMDP, expert: TabularPolicy, learned: TabularPolicy) -> float:
    """Negative KL between the learned and expert horizon-averaged visitations."""
    _, rho_a = visitation(mdp, learned)
    _, rho_e = visitation(mdp, expert)
    return -kl_divergence(rho_a, rho_e)


def _expected_kl(weights: np.ndarray, kl: np.ndarray) -> float:
    # states with zero visitation contribute nothing, even where KL is infinite
    mask = weights > 0
    return float(np.sum(weights[mask] * kl[mask]))


def check_theorem1(mdp: TabularMDP, expert: TabularPolicy, learned: TabularPolicy) -> BoundReport:
    """Horizon bound on the KL between averaged visitations."""
    _check_shapes(mdp, expert, learned)
    rho_a = state_marginals(mdp, learned)
    rho_e = state_marginals(mdp, expert)
    kl = policy_kl(learned, expert)
    H = mdp.horizon
    step_kl = [_expected_kl(rho_a[t], kl) for t in range(H)]
    if any(math.isinf(v) for v in step_kl):
        raise ValueError("learned policy is not absolutely continuous w.r.t. the expert on visited states")
    lhs = kl_divergence(rho_a[1:].mean(axis=0), rho_e[1:].mean(axis=0))
    rhs = math.fsum((H - t) * step_kl[t] for t in range(H)) / H
    return BoundReport.of(lhs, rhs)


def check_lemma1(mdp: TabularMDP, expert: TabularPolicy, learned: TabularPolicy,
                 beta: float, support_mask: np.ndarray | None = None) -> BoundReport:
    """Per-step support bound for steps t = 0..H-1.

    ``support_mask[t, s]`` marks states treated as inside the expert's step-t
    support; by default the exact support rho_E^t > 0. The report sums the
    per-step sides; ``per_step`` holds one report per step.
    """
    _check_shapes(mdp, expert, learned)
    if not beta >= 0:
        raise ValueError("beta must be nonnegative")
    H = mdp.horizon
    rho_a = state_marginals(mdp, learned)[:H]
    if support_mask is None:
        support_mask = state_marginals(mdp, expert)[:H] > 0
    support_mask = np.asarray(support_mask, dtype=bool)
    if support_mask.shape != (H, mdp.n_states):
        raise ValueError(f"support_mask must have shape ({H}, {mdp.n_states})")
    kl = policy_kl(learned, expert)
    for t in range(H):
        for s in np.flatnonzero(support_mask[t]):
            if kl[s] > beta:
                raise ValueError(
                    f"precondition violated at step {t}, state {s}: KL {kl[s]:.6g} > beta {beta:.6g}"
                )
    steps = []
    for t in range(H):
        inside = support_mask[t]
        lhs = _expected_kl(rho_a[t], kl)
        rhs = float(np.sum(rho_a[t][inside]) * beta) + _expected_kl(np.where(inside, 0.0, rho_a[t]), kl)
        steps.append(BoundReport.of(lhs, rhs))
    return BoundReport.of(
        math.fsum(r.lhs for r in steps), math.fsum(r.rhs for r in steps), tuple(steps)
    )


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, horizon: int,
               sparsity: float = 0.5) -> TabularMDP:
    """Random MDP whose transition rows are Dirichlet over a random subset of successors."""
    P = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            k = max(1, int(rng.binomial(n_states, 1.0 - sparsity)))
            succ = rng.choice(n_states, size=k, replace=False)
            P[s, a, succ] = rng.dirichlet(np.ones(k))
    k0 = int(rng.integers(1, n_states + 1))
    rho0 = np.zeros(n_states)
    rho0[rng.choice(n_states, size=k0, replace=False)] = rng.dirichlet(np.ones(k0))
    return TabularMDP(P, rho0, horizon)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int,
                  floor: float = 0.01) -> TabularPolicy:
    """Dirichlet policy mixed with a uniform per-entry ``floor`` (full support)."""
    if floor * n_actions > 1:
        raise ValueError("floor too large for the action count")
    raw = rng.dirichlet(np.full(n_actions, 0.5), size=n_states)
    return TabularPolicy(floor + (1.0 - floor * n_actions) * raw)


def random_instance(seed: int, max_states: int = 10, max_actions: int = 4, max_horizon: int = 10,
                    floor: float = 0.01) -> tuple[TabularMDP, TabularPolicy, TabularPolicy]:
    """(mdp, expert, learned) drawn deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    H = int(rng.integers(1, max_horizon + 1))
    mdp = random_mdp(rng, S, A, H, sparsity=float(rng.uniform(0.0, 0.8)))
    return mdp, random_policy(rng, S, A, floor), random_policy(rng, S, A, floor)


def verify_theorem1(seeds) -> list[BoundReport]:
    return [check_theorem1(*random_instance(int(s))) for s in seeds]


def verify_lemma1(seeds, support_threshold: float = 1e-6) -> list[BoundReport]:
    """Per seed: support = states with expert visitation above the threshold, beta = max KL there."""
    reports = []
    for s in seeds:
        mdp, expert, learned = random_instance(int(s))
        mask = state_marginals(mdp, expert)[:mdp.horizon] > support_threshold
        kl = policy_kl(learned, expert)
        beta = float(max((kl[m].max() for m in mask if m.any()), default=0.0))
        reports.append(check_lemma1(mdp, expert, learned, beta, mask))
    return reports
