"""Stochastic approximation MLE with simulated missing data.

Each iteration refreshes the latent data x by Metropolis-Hastings steps
targeting its predictive density given the current parameter, then moves
the parameter along the complete-data log likelihood gradient evaluated
at the imputed x, with the usual decaying gain and truncation safeguard.

A small Gaussian location fixture ships with the package: observations
y_i = theta + z_i + w_i with independent standard normal z, w, for which
the exact MLE is the sample mean of y and the latent posterior is
x_i | y_i, theta ~ N((theta + y_i)/2, 1/2).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from .kernels import Box, Proposal, RandomWalk, mh_step, reflect_into_box
from .sa import (
    GainSchedule,
    KahanSum,
    RunTrace,
    Snapshot,
    TruncationLadder,
    gain_at,
    truncation_decide,
    threshold_at,
)

CHUNK = 2048


@dataclass(frozen=True)
class MissingDataModel:
    """Incomplete-data problem: gradient oracle plus latent predictive law.

    grad_complete_loglik(x, theta) is the complete-data score at theta;
    predictive_log_density(x, theta) is log f(x | observed data, theta) up
    to an additive constant. When batched is True both callables must
    broadcast over a leading batch axis, which unlocks the vectorized
    multi-chain driver.
    """

    grad_complete_loglik: Callable
    predictive_log_density: Callable
    x_space: Box
    batched: bool = False


class NonFiniteGradientError(RuntimeError):
    """Complete-data gradient overflowed or hit an invalid region."""

    def __init__(self, k: int, theta: np.ndarray, x: np.ndarray,
                 grad: np.ndarray):
        self.iteration = k
        self.theta = np.asarray(theta)
        self.x = np.asarray(x)
        self.grad = np.asarray(grad)
        super().__init__(
            f"nonfinite gradient at iteration {k}: grad={np.asarray(grad)}, "
            f"theta={np.asarray(theta)}, x={np.asarray(x)}")


def samle_step(theta: np.ndarray, x: np.ndarray, model: MissingDataModel,
               proposal: Proposal, a: float, k: int, schedule: GainSchedule,
               ladder: TruncationLadder, rng: np.random.Generator):
    """One imputation-then-gradient iteration; returns (theta, x, truncated).

    On a truncation event both coordinates reset to the ladder's reinit
    point and ladder.sigma is advanced in place, so repeated calls against
    the same ladder compose into a full run.
    """
    theta = np.asarray(theta, dtype=float)
    x_next, _ = mh_step(
        x, lambda pt: model.predictive_log_density(pt, theta), proposal, rng)
    grad = np.asarray(model.grad_complete_loglik(x_next, theta), dtype=float)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError(k, theta, x_next, grad)
    theta_half = theta + a * grad
    decision = truncation_decide(theta, theta_half, k, schedule, ladder)
    if decision.accepted:
        return theta_half, x_next, False
    ladder.sigma = decision.sigma
    return decision.theta, decision.state, True


def run_samle(model: MissingDataModel, schedule: GainSchedule,
              ladder: TruncationLadder, k_max: int, seed: int, *,
              proposal: Proposal | None = None, sweeps: int = 1,
              snapshot_stride: int = 1000) -> RunTrace:
    """Run one chain for k_max iterations and keep the full parameter path.

    sweeps > 1 applies that many MH refreshes to the latent data before
    each gradient step. Batch-capable models route through the vectorized
    driver, so a solo run is bit-identical to the matching batch member.
    """
    if model.batched:
        return run_samle_batch(
            model, schedule, ladder, k_max, [seed], proposal=proposal,
            sweeps=sweeps, snapshot_stride=snapshot_stride,
            store_thetas=True)[0]
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    proposal = proposal or RandomWalk(step=1.0, bounds=model.x_space)
    ladder = replace(ladder)
    rng = np.random.default_rng(seed)
    theta = ladder.reinit_theta.copy()
    x = ladder.reinit_state
    if x is None:
        raise ValueError("ladder.reinit_state must hold the initial latent data")
    x = np.asarray(x, dtype=float)

    d = theta.size
    ksum = KahanSum(d)
    thetas = np.empty((k_max, d))
    sigma_events: list[int] = []
    snapshots: list[Snapshot] = []

    for k in range(1, k_max + 1):
        for _ in range(sweeps - 1):
            x, _ = mh_step(
                x, lambda pt: model.predictive_log_density(pt, theta),
                proposal, rng)
        a = gain_at(schedule, k)
        theta, x, truncated = samle_step(
            theta, x, model, proposal, a, k, schedule, ladder, rng)
        if truncated:
            sigma_events.append(k)
        ksum.add(theta)
        thetas[k - 1] = theta
        if k % snapshot_stride == 0 or k == k_max:
            snapshots.append(Snapshot(
                k=k, theta=theta.copy(), pi_hat=None, sigma=ladder.sigma,
                theta_sum=ksum.value.copy()))

    return RunTrace(
        thetas=thetas, sigma_events=sigma_events, running_sum=ksum.value,
        k=k_max, seed=seed, visit_counts=None, snapshots=snapshots,
        final_theta=theta.copy(), final_sigma=ladder.sigma, final_state=x)


def run_samle_batch(model: MissingDataModel, schedule: GainSchedule,
                    ladder: TruncationLadder, k_max: int,
                    seeds: Sequence[int], *, proposal: Proposal | None = None,
                    sweeps: int = 1, snapshot_stride: int = 1000,
                    store_thetas: bool = False) -> list[RunTrace]:
    """Run many chains in lockstep; needs a batch-capable model.

    Chain b consumes only default_rng(seeds[b]). Per block of CHUNK
    iterations each chain draws its proposal normals first (one
    (CHUNK, sweeps, dim) block) and then its acceptance uniforms, making
    every chain's stream independent of the batch composition.
    """
    if not model.batched:
        raise ValueError("run_samle_batch needs a model with batched=True")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    proposal = proposal or RandomWalk(step=1.0, bounds=model.x_space)
    if not isinstance(proposal, RandomWalk):
        raise TypeError("run_samle_batch supports RandomWalk proposals only")

    ladder = replace(ladder)
    center = ladder.center
    reinit_theta = ladder.reinit_theta
    x0 = ladder.reinit_state
    if x0 is None:
        raise ValueError("ladder.reinit_state must hold the initial latent data")
    x0 = np.asarray(x0, dtype=float)
    d = reinit_theta.size
    dx = x0.size

    B = len(seeds)
    rngs = [np.random.default_rng(s) for s in seeds]
    th = np.tile(reinit_theta, (B, 1))
    xs = np.tile(x0, (B, 1))
    sig = np.full(B, ladder.sigma, dtype=np.int64)
    ksum = KahanSum((B, d))
    thetas = np.empty((B, k_max, d)) if store_thetas else None
    sigma_events: list[list[int]] = [[] for _ in range(B)]
    snaps: list[list[Snapshot]] = [[] for _ in range(B)]
    with np.errstate(over="ignore"):  # huge sigma saturates to inf
        radius = ladder.r0 * ladder.growth ** sig.astype(float)

    k = 0
    while k < k_max:
        length = min(CHUNK, k_max - k)
        z = np.empty((B, length, sweeps, dx))
        u = np.empty((B, length, sweeps))
        for b, rng in enumerate(rngs):
            z[b] = rng.standard_normal((length, sweeps, dx))
            u[b] = rng.random((length, sweeps))

        for i in range(length):
            k += 1
            lp_x = np.asarray(model.predictive_log_density(xs, th), dtype=float)
            for s in range(sweeps):
                ys = reflect_into_box(xs + proposal.step * z[:, i, s, :],
                                      proposal.bounds or model.x_space)
                lp_y = np.asarray(model.predictive_log_density(ys, th),
                                  dtype=float)
                accept = u[:, i, s] < np.exp(np.minimum(0.0, lp_y - lp_x))
                xs = np.where(accept[:, None], ys, xs)
                lp_x = np.where(accept, lp_y, lp_x)

            grad = np.asarray(model.grad_complete_loglik(xs, th), dtype=float)
            if not np.all(np.isfinite(grad)):
                b = int(np.argwhere(~np.isfinite(grad).all(axis=1))[0, 0])
                raise NonFiniteGradientError(k, th[b], xs[b], grad[b])
            a = gain_at(schedule, k)
            th_half = th + a * grad
            diff = th_half - th
            move = np.sqrt((diff * diff).sum(axis=1))
            dev = th_half - center[None, :]
            inside = np.sqrt((dev * dev).sum(axis=1)) <= radius
            ok = (move <= threshold_at(schedule, k)) & inside
            if ok.all():
                th = th_half
            else:
                th = np.where(ok[:, None], th_half, reinit_theta[None, :])
                xs = np.where(ok[:, None], xs, x0[None, :])
                sig = np.where(ok, sig, sig + 1)
                with np.errstate(over="ignore"):
                    radius = ladder.r0 * ladder.growth ** sig.astype(float)
                for b in np.nonzero(~ok)[0]:
                    sigma_events[b].append(k)
            ksum.add(th)
            if store_thetas:
                thetas[:, k - 1, :] = th
            if k % snapshot_stride == 0 or k == k_max:
                for b in range(B):
                    snaps[b].append(Snapshot(
                        k=k, theta=th[b].copy(), pi_hat=None,
                        sigma=int(sig[b]), theta_sum=ksum.value[b].copy()))

    return [
        RunTrace(
            thetas=thetas[b] if store_thetas else None,
            sigma_events=sigma_events[b],
            running_sum=ksum.value[b].copy(),
            k=k_max,
            seed=seeds[b],
            visit_counts=None,
            snapshots=snaps[b],
            final_theta=th[b].copy(),
            final_sigma=int(sig[b]),
            final_state=xs[b].copy(),
        )
        for b in range(B)
    ]


def load_gaussian_toy() -> np.ndarray:
    """Packaged observations for the Gaussian location fixture."""
    text = resources.files("samcmc.data").joinpath("gaussian_toy.txt").read_text()
    values = [float(line) for line in text.splitlines()
              if line.strip() and not line.lstrip().startswith("#")]
    return np.asarray(values)


def gaussian_location_model(y: np.ndarray) -> MissingDataModel:
    """Latent x_i ~ N(theta, 1) observed through y_i = x_i + N(0, 1) noise.

    The complete-data score is sum(x_i - theta) and the latent posterior
    is N((theta + y_i)/2, 1/2) componentwise; the MLE from y alone is its
    sample mean. Callables broadcast over a leading batch axis.
    """
    y = np.asarray(y, dtype=float)
    n = y.size

    def grad(x, theta):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        return (x - theta).sum(axis=-1, keepdims=True)

    def predictive(x, theta):
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        center = 0.5 * (theta + y)
        # posterior variance is 1/2, so the quadratic coefficient is 1
        return -((x - center) ** 2).sum(axis=-1)

    bound = np.full(n, 1e100)
    return MissingDataModel(
        grad_complete_loglik=grad,
        predictive_log_density=predictive,
        x_space=Box(-bound, bound),
        batched=True,
    )
