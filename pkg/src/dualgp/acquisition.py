"""Acquisition functions and fantasy-batch assembly.

Batches of query points are built greedily: maximize the acquisition over a
seeded random search with local coordinate refinement, invent a fantasy
observation at the winner (the predictive mean by default), condition the
model on it through a dual-space NGD step, and repeat.  The conditioning
happens on a throwaway copy of the state; the real model is never touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .dual import DualState, ngd_step, predict
from .likelihoods import BernoulliLogit, Gaussian, Likelihood

DEFAULT_SEARCH_BUDGET = 2048
DEFAULT_REFINE_STEPS = 20


def expected_improvement(mean, var, best) -> np.ndarray:
    """Expected improvement over ``best`` for maximization.

    ``s * (z * Phi(z) + phi(z))`` with ``z = (mean - best) / s``; points with
    nonpositive variance contribute their deterministic improvement
    ``max(mean - best, 0)``.
    """
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    out = np.maximum(mean - best, 0.0)
    positive = var > 0.0
    if np.any(positive):
        s = np.sqrt(var[positive])
        z = (mean[positive] - best) / s
        phi = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
        out = np.asarray(out, dtype=np.float64)
        out[positive] = s * (z * ndtr(z) + phi)
    return out


def probability_of_validity(state: DualState, lik: BernoulliLogit, x: np.ndarray) -> np.ndarray:
    """Predictive probability of the positive class under a classifier state."""
    mean, var = predict(state, x)
    return lik.predictive_density(np.ones(mean.shape[0]), mean, var)


@dataclass
class ExpectedImprovement:
    """EI over the model being fantasized, with box ``bounds`` of shape (d, 2)."""

    best: float
    bounds: np.ndarray

    def evaluate(self, state: DualState, x: np.ndarray) -> np.ndarray:
        mean, var = predict(state, x)
        return expected_improvement(mean, var, self.best)


@dataclass
class ProbabilityOfValidity:
    """Validity probability from a frozen side classifier.

    Ignores the fantasized state: the classifier is not conditioned during
    batch assembly.
    """

    classifier_state: DualState
    classifier_lik: BernoulliLogit
    bounds: np.ndarray

    def evaluate(self, state: DualState, x: np.ndarray) -> np.ndarray:
        del state
        return probability_of_validity(self.classifier_state, self.classifier_lik, x)


@dataclass
class ProductAcquisition:
    """Elementwise product of component acquisitions (e.g. EI times validity)."""

    parts: list

    @property
    def bounds(self) -> np.ndarray:
        return self.parts[0].bounds

    def evaluate(self, state: DualState, x: np.ndarray) -> np.ndarray:
        score = self.parts[0].evaluate(state, x)
        for part in self.parts[1:]:
            score = score * part.evaluate(state, x)
        return score


def _refine(acq, state: DualState, x0: np.ndarray, s0: float, steps: int) -> np.ndarray:
    """Deterministic coordinate pattern search inside the acquisition's box."""
    bounds = np.asarray(acq.bounds, dtype=np.float64)
    lo, hi = bounds[:, 0], bounds[:, 1]
    widths = 0.05 * (hi - lo)
    x_cur, s_cur = x0.copy(), float(s0)
    for _ in range(steps):
        improved = False
        for dim in range(len(x_cur)):
            for sign in (1.0, -1.0):
                cand = x_cur.copy()
                cand[dim] = np.clip(cand[dim] + sign * widths[dim], lo[dim], hi[dim])
                score = float(acq.evaluate(state, cand[None, :])[0])
                if score > s_cur:
                    x_cur, s_cur = cand, score
                    improved = True
        if not improved:
            widths *= 0.5
    return x_cur


def _fantasy_label(lik: Likelihood, mean: float, var: float, sample: bool, rng) -> float:
    if isinstance(lik, Gaussian):
        if sample:
            return float(rng.normal(mean, np.sqrt(max(var, 0.0) + lik.noise_variance)))
        return float(mean)
    prob = float(lik.predictive_density(np.ones(1), np.array([mean]), np.array([var]))[0])
    if sample:
        return 1.0 if rng.uniform() < prob else -1.0
    return 1.0 if prob >= 0.5 else -1.0


def fantasize_batch(
    state: DualState,
    lik: Likelihood,
    acq,
    k: int,
    search_budget: int = DEFAULT_SEARCH_BUDGET,
    seed: int = 0,
    refine_steps: int = DEFAULT_REFINE_STEPS,
    rho: float = 1.0,
    ngd_steps: int = 1,
    fantasy_sample: bool = False,
) -> tuple[np.ndarray, DualState]:
    """Assemble ``k`` query points by greedy fantasy conditioning.

    Each round maximizes ``acq`` over ``search_budget`` seeded uniform
    samples plus coordinate refinement, conditions a fantasy copy of the
    state on the invented observation (predictive mean unless
    ``fantasy_sample``), and continues.  For a Gaussian likelihood one
    ``rho = 1`` step is exact rank-one conditioning; non-Gaussian
    likelihoods use the given ``(rho, ngd_steps)``.  Returns the points and
    the final fantasy state; the input state is never modified.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    bounds = np.asarray(acq.bounds, dtype=np.float64)
    lo, hi = bounds[:, 0], bounds[:, 1]
    rng = np.random.default_rng(seed)
    fantasy = state
    points = []
    for _ in range(k):
        candidates = rng.uniform(lo, hi, size=(search_budget, len(lo)))
        scores = acq.evaluate(fantasy, candidates)
        best_idx = int(np.argmax(scores))
        x_best = _refine(acq, fantasy, candidates[best_idx], scores[best_idx], refine_steps)
        points.append(x_best)

        mean, var = predict(fantasy, x_best[None, :])
        y_fantasy = _fantasy_label(lik, float(mean[0]), float(var[0]), fantasy_sample, rng)
        prior_alpha = fantasy.alpha_u.copy()
        prior_b = fantasy.b_u.copy()
        for _ in range(ngd_steps):
            fantasy = ngd_step(
                fantasy, lik, x_best[None, :], np.array([y_fantasy]), rho, prior_alpha, prior_b
            )
    return np.asarray(points), fantasy
