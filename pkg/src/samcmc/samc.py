"""Stochastic approximation Monte Carlo: operations and run drivers.

The sampler targets a reweighted density proportional to psi(x) *
exp(-theta^(j(x))) on each of m labeled subregions and adapts theta so
that each subregion is visited with a prescribed frequency pi. Only the
first m-1 components of theta are free; the last is pinned at zero, so
trial densities are invariant to the additive drift the update would
otherwise accumulate.

Finite state spaces run through a vectorized multi-chain engine that is
bit-for-bit reproducible chain by chain; arbitrary spaces fall back to a
scalar loop built on the MH kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence, Union

import numpy as np

from .kernels import Box, DiscreteNeighbor, Proposal, RandomWalk, mh_step
from .oracle import FiniteChainSpec
from .sa import (
    GainSchedule,
    KahanSum,
    RunTrace,
    Snapshot,
    TruncationLadder,
    gain_at,
    threshold_at,
    truncation_decide,
)

# chains per pre-drawn randomness block in the vectorized engine; bounds
# transient memory without changing any draw (the chunking is part of the
# draw-order contract, see _run_finite_batch)
CHUNK = 8192


@dataclass(frozen=True)
class FiniteStates:
    """Sample space 0..n_states-1 with an optional default proposal matrix."""

    n_states: int
    proposal: np.ndarray | None = None

    def __post_init__(self):
        if self.n_states < 1:
            raise ValueError("n_states must be >= 1")
        if self.proposal is not None:
            object.__setattr__(
                self, "proposal", np.asarray(self.proposal, dtype=float))
            if self.proposal.shape != (self.n_states, self.n_states):
                raise ValueError("proposal matrix shape must match n_states")


Space = Union[FiniteStates, Box]


@dataclass(frozen=True)
class SamcModel:
    """Target description: unnormalized log density, labeling, and weights.

    log_psi(x) and classify(x) must be pure functions; classify returns a
    1-based label in 1..m. pi is the desired visiting distribution.
    """

    log_psi: Callable
    classify: Callable
    m: int
    pi: np.ndarray
    space: Space

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        pi = np.asarray(self.pi, dtype=float)
        object.__setattr__(self, "pi", pi)
        if pi.shape != (self.m,):
            raise ValueError(f"pi must have shape ({self.m},)")
        if np.any(pi <= 0):
            raise ValueError("pi must be strictly positive")
        if abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("pi must sum to 1")

    @classmethod
    def from_chain(cls, chain: FiniteChainSpec) -> "SamcModel":
        log_psi = chain.log_psi
        labels = chain.labels

        def log_psi_fn(x: int) -> float:
            return float(log_psi[x])

        def classify_fn(x: int) -> int:
            return int(labels[x])

        return cls(
            log_psi=log_psi_fn,
            classify=classify_fn,
            m=chain.m,
            pi=chain.pi,
            space=FiniteStates(chain.n_states, chain.proposal),
        )


@dataclass(frozen=True)
class SamcTheta:
    """Log weight adjustments for the first m-1 subregions; the m-th is 0."""

    theta: np.ndarray
    m: int

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        if theta.shape != (self.m - 1,):
            raise ValueError(f"theta must have shape ({self.m - 1},)")
        if theta.size and not np.all(np.isfinite(theta)):
            raise ValueError("theta components must be finite")

    @classmethod
    def zeros(cls, m: int) -> "SamcTheta":
        return cls(np.zeros(m - 1), m)

    def component(self, j: int) -> float:
        """Extended component for a 1-based label; the pinned one is 0."""
        if not 1 <= j <= self.m:
            raise ValueError(f"label {j} outside 1..{self.m}")
        return 0.0 if j == self.m else float(self.theta[j - 1])

    def extended(self) -> np.ndarray:
        return np.append(self.theta, 0.0)


def _as_theta(theta, m: int) -> SamcTheta:
    if isinstance(theta, SamcTheta):
        if theta.m != m:
            raise ValueError(f"theta has m={theta.m}, model has m={m}")
        return theta
    return SamcTheta(np.asarray(theta, dtype=float), m)


def trial_log_density(model: SamcModel, theta, x) -> float:
    """Log of the reweighted target psi(x) exp(-theta^(j(x))), unnormalized."""
    th = _as_theta(theta, model.m)
    j = model.classify(x)
    return float(model.log_psi(x)) - th.component(j)


def samc_log_ratio(theta, m: int, j_x: int, j_y: int,
                   log_psi_x: float, log_psi_y: float,
                   log_q_fwd: float, log_q_bwd: float) -> float:
    """Log MH ratio for the reweighted target, assembled from parts.

    Useful when log_psi values are already at hand; run drivers use it to
    avoid recomputing the current point's density every step.
    """
    th = _as_theta(theta, m)
    return (th.component(j_x) - th.component(j_y)
            + log_psi_y - log_psi_x + log_q_bwd - log_q_fwd)


def samc_update(theta, m: int, j_visited: int, pi: np.ndarray,
                a: float) -> SamcTheta:
    """Gain-weighted step theta + a*(indicator - pi) on the free components.

    The full m-component update vector sums to zero by construction and
    has norm at most sqrt(2); both are asserted (debug runs only).
    """
    th = _as_theta(theta, m)
    if not 1 <= j_visited <= m:
        raise ValueError(f"visited label {j_visited} outside 1..{m}")
    pi = np.asarray(pi, dtype=float)
    indicator = np.zeros(m - 1)
    if j_visited < m:
        indicator[j_visited - 1] = 1.0
    h = indicator - pi[: m - 1]
    if __debug__:
        h_full = np.append(h, (1.0 if j_visited == m else 0.0) - pi[m - 1])
        assert abs(h_full.sum()) < 1e-12, "update vector must sum to zero"
        assert np.dot(h_full, h_full) <= 2.0 + 1e-12, "update norm exceeds sqrt(2)"
    return SamcTheta(th.theta + a * h, m)


def omega_hat(theta_bar, pi: np.ndarray) -> np.ndarray:
    """Subregion weight estimates from an averaged theta.

    Computed as softmax(log pi + extended theta): normalization happens in
    log space so huge theta components cannot overflow.
    """
    pi = np.asarray(pi, dtype=float)
    theta_bar = np.asarray(theta_bar, dtype=float)
    if theta_bar.shape != (pi.size - 1,):
        raise ValueError(
            f"theta_bar must have {pi.size - 1} components for {pi.size} subregions")
    log_w = np.log(pi) + np.append(theta_bar, 0.0)
    log_w -= log_w.max()
    w = np.exp(log_w)
    return w / w.sum()


def visit_freq(trace: RunTrace) -> np.ndarray:
    """Empirical subregion visiting frequencies over a completed run."""
    if trace.visit_counts is None:
        raise ValueError("trace carries no visit counts")
    return trace.visit_counts / trace.k


def _tabulate(model: SamcModel) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate log_psi and classify over a finite space once, up front."""
    n = model.space.n_states
    log_psi = np.array([float(model.log_psi(x)) for x in range(n)])
    labels = np.array([int(model.classify(x)) for x in range(n)], dtype=np.int64)
    if labels.min() < 1 or labels.max() > model.m:
        raise ValueError("classify must return labels in 1..m")
    return log_psi, labels


def _default_proposal(model: SamcModel, proposal: Proposal | None) -> Proposal:
    if proposal is not None:
        return proposal
    if isinstance(model.space, FiniteStates):
        if model.space.proposal is not None:
            return DiscreteNeighbor(model.space.proposal)
        n = model.space.n_states
        return DiscreteNeighbor(np.full((n, n), 1.0 / n))
    if isinstance(model.space, Box):
        return RandomWalk(step=1.0, bounds=model.space)
    raise TypeError(f"unknown space type: {type(model.space).__name__}")


def run_samc(model: SamcModel, schedule: GainSchedule, ladder: TruncationLadder,
             k_max: int, seed: int, *, proposal: Proposal | None = None,
             snapshot_stride: int = 1000) -> RunTrace:
    """Run one adaptive chain for k_max steps; stores the full theta path.

    Finite spaces use the vectorized engine with a single chain, so a solo
    run is bit-identical to the corresponding member of a batch.
    """
    proposal = _default_proposal(model, proposal)
    if isinstance(model.space, FiniteStates):
        if not isinstance(proposal, DiscreteNeighbor):
            raise TypeError("finite state spaces need a DiscreteNeighbor proposal")
        return run_samc_batch(
            model, schedule, ladder, k_max, [seed], proposal=proposal,
            snapshot_stride=snapshot_stride, store_thetas=True)[0]
    return _run_samc_generic(model, schedule, ladder, k_max, seed,
                             proposal, snapshot_stride)


def _run_samc_generic(model: SamcModel, schedule: GainSchedule,
                      ladder: TruncationLadder, k_max: int, seed: int,
                      proposal: Proposal, snapshot_stride: int) -> RunTrace:
    """Scalar fallback driver for spaces without a tabulated engine."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    ladder = replace(ladder)
    rng = np.random.default_rng(seed)
    m = model.m
    theta = SamcTheta(ladder.reinit_theta.copy(), m)
    x = ladder.reinit_state
    if x is None:
        raise ValueError("ladder.reinit_state must hold the initial sample point")

    counts = np.zeros(m, dtype=np.int64)
    ksum = KahanSum(m - 1)
    thetas = np.empty((k_max, m - 1))
    sigma_events: list[int] = []
    snapshots: list[Snapshot] = []

    for k in range(1, k_max + 1):
        x, _ = mh_step(x, lambda pt: trial_log_density(model, theta, pt),
                       proposal, rng)
        j = model.classify(x)
        a = gain_at(schedule, k)
        theta_half = samc_update(theta, m, j, model.pi, a)
        decision = truncation_decide(theta.theta, theta_half.theta, k,
                                     schedule, ladder)
        if decision.accepted:
            theta = theta_half
        else:
            theta = SamcTheta(decision.theta, m)
            x = decision.state
            ladder.sigma = decision.sigma
            sigma_events.append(k)
            j = model.classify(x)
        counts[j - 1] += 1
        ksum.add(theta.theta)
        thetas[k - 1] = theta.theta
        if k % snapshot_stride == 0 or k == k_max:
            snapshots.append(Snapshot(
                k=k, theta=theta.theta.copy(), pi_hat=counts / k,
                sigma=ladder.sigma, theta_sum=ksum.value.copy()))

    return RunTrace(
        thetas=thetas, sigma_events=sigma_events, running_sum=ksum.value,
        k=k_max, seed=seed, visit_counts=counts, snapshots=snapshots,
        final_theta=theta.theta.copy(), final_sigma=ladder.sigma, final_state=x)


def run_samc_batch(model: SamcModel, schedule: GainSchedule,
                   ladder: TruncationLadder, k_max: int, seeds: Sequence[int],
                   *, proposal: Proposal | None = None,
                   snapshot_stride: int = 1000,
                   store_thetas: bool = False) -> list[RunTrace]:
    """Run many finite-space chains in lockstep with vectorized arithmetic.

    Chain b is driven purely by default_rng(seeds[b]): each chain draws,
    per block of CHUNK iterations, first its proposal uniforms and then its
    acceptance uniforms. A batch member therefore reproduces the same
    chain run solo, bit for bit.
    """
    if not isinstance(model.space, FiniteStates):
        raise TypeError("run_samc_batch supports finite state spaces only")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    proposal = _default_proposal(model, proposal)
    if not isinstance(proposal, DiscreteNeighbor):
        raise TypeError("finite state spaces need a DiscreteNeighbor proposal")

    log_psi, labels = _tabulate(model)
    m, pi = model.m, model.pi
    n = model.space.n_states
    if proposal.matrix.shape != (n, n):
        raise ValueError("proposal matrix shape must match the state space")
    cdf = proposal._cdf
    q = proposal.matrix
    bad = (q > 0) & (q.T == 0)
    if bad.any():
        x_bad, y_bad = map(int, np.argwhere(bad)[0])
        raise ValueError(
            f"non-reversible proposal pair: q({x_bad},{y_bad}) > 0 "
            f"but q({y_bad},{x_bad}) = 0")
    log_q = np.where(q > 0, np.log(np.maximum(q, 1e-300)), -np.inf)
    # log MH ratio of the unweighted target, tabulated over ordered state
    # pairs; entries for pairs with no proposal mass are never gathered.
    # The broadcast order matches the per-step arithmetic bit for bit.
    with np.errstate(invalid="ignore"):
        ratio_table = (log_psi[None, :] - log_psi[:, None] + log_q.T) - log_q

    # per-label update rows and their squared norms; label j moves theta by
    # a * update_rows[j-1], which covers every possible step of the chain
    eye = np.eye(m)[:, : m - 1]
    update_rows = eye - pi[None, : m - 1]
    full = np.concatenate([update_rows, (np.eye(m)[:, m - 1:] - pi[None, m - 1:])],
                          axis=1)
    assert np.abs(full.sum(axis=1)).max() < 1e-12
    assert (full * full).sum(axis=1).max() <= 2.0 + 1e-12

    ladder = replace(ladder)
    center = ladder.center
    reinit_theta = ladder.reinit_theta
    if center.shape != (m - 1,):
        raise ValueError(f"ladder center must have shape ({m - 1},)")
    x0 = ladder.reinit_state
    if x0 is None:
        raise ValueError("ladder.reinit_state must hold the initial state index")
    x0 = int(x0)
    if not 0 <= x0 < n:
        raise ValueError(f"initial state {x0} outside 0..{n - 1}")

    is_free = labels < m
    free_idx = np.minimum(labels, m - 1) - 1

    B = len(seeds)
    rngs = [np.random.default_rng(s) for s in seeds]
    th = np.tile(reinit_theta, (B, 1))
    xs = np.full(B, x0, dtype=np.int64)
    sig = np.full(B, ladder.sigma, dtype=np.int64)
    counts = np.zeros((B, m), dtype=np.int64)
    ksum = KahanSum((B, m - 1))
    rows = np.arange(B)
    thetas = np.empty((B, k_max, m - 1)) if store_thetas else None
    sigma_events: list[list[int]] = [[] for _ in range(B)]
    snaps: list[list[Snapshot]] = [[] for _ in range(B)]
    with np.errstate(over="ignore"):  # huge sigma saturates to inf
        radius = ladder.r0 * ladder.growth ** sig.astype(float)

    k = 0
    while k < k_max:
        length = min(CHUNK, k_max - k)
        u_prop = np.empty((B, length))
        u_acc = np.empty((B, length))
        for b, rng in enumerate(rngs):
            u_prop[b] = rng.random(length)
            u_acc[b] = rng.random(length)

        for i in range(length):
            k += 1
            # proposal draw by inverse cdf on the current state's row
            ys = (cdf[xs] <= u_prop[:, i][:, None]).sum(axis=1)
            log_r = ratio_table[xs, ys]
            if m > 1:
                th_ext_x = np.where(is_free[xs], th[rows, free_idx[xs]], 0.0)
                th_ext_y = np.where(is_free[ys], th[rows, free_idx[ys]], 0.0)
                log_r = log_r + (th_ext_x - th_ext_y)
            accept = u_acc[:, i] < np.exp(np.minimum(0.0, log_r))
            xs = np.where(accept, ys, xs)
            jn = labels[xs]

            a = gain_at(schedule, k)
            th_half = th + a * update_rows[jn - 1]
            # norm of the realized difference, not of a*update: matches the
            # scalar truncation_decide arithmetic bit for bit
            diff = th_half - th
            move = np.sqrt((diff * diff).sum(axis=1))
            dev = th_half - center[None, :]
            inside = np.sqrt((dev * dev).sum(axis=1)) <= radius
            ok = (move <= threshold_at(schedule, k)) & inside
            if ok.all():
                th = th_half
            else:
                th = np.where(ok[:, None], th_half, reinit_theta[None, :])
                xs = np.where(ok, xs, x0)
                sig = np.where(ok, sig, sig + 1)
                with np.errstate(over="ignore"):
                    radius = ladder.r0 * ladder.growth ** sig.astype(float)
                jn = labels[xs]
                for b in np.nonzero(~ok)[0]:
                    sigma_events[b].append(k)
            counts[rows, jn - 1] += 1
            ksum.add(th)
            if store_thetas:
                thetas[:, k - 1, :] = th
            if k % snapshot_stride == 0 or k == k_max:
                for b in range(B):
                    snaps[b].append(Snapshot(
                        k=k, theta=th[b].copy(), pi_hat=counts[b] / k,
                        sigma=int(sig[b]), theta_sum=ksum.value[b].copy()))

    return [
        RunTrace(
            thetas=thetas[b] if store_thetas else None,
            sigma_events=sigma_events[b],
            running_sum=ksum.value[b].copy(),
            k=k_max,
            seed=seeds[b],
            visit_counts=counts[b].copy(),
            snapshots=snaps[b],
            final_theta=th[b].copy(),
            final_sigma=int(sig[b]),
            final_state=int(xs[b]),
        )
        for b in range(B)
    ]
