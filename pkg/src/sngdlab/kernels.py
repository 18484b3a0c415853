"""Row sampling, regularized pseudoinverse/projector kernels, and expectation engines.

Everything here is a pure function of its inputs plus an explicit RNG handle.
Exact expectations enumerate subsets in colexicographic order and reduce with
pairwise (tree) summation, so results are independent of scheduling and
bit-stable across reruns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SAMPLER_KINDS = ("uniform_without_replacement", "k_dpp")
MODE_KINDS = ("exact_enumeration", "monte_carlo")

DEFAULT_ENUMERATION_BUDGET = 200_000
PINV_CUTOFF = 1e-12  # relative to sigma_max, lambda=0 fallback


class SingularBlock(RuntimeError):
    """lambda=0 and the sampled block is numerically zero past the pinv fallback tolerance."""


class BudgetExceeded(RuntimeError):
    """C(m,k) exceeds the subset-enumeration budget."""


@dataclass(frozen=True)
class SampleSet:
    """A sampled row subset: strictly increasing indices in [0, m)."""

    indices: tuple
    k: int

    def __post_init__(self):
        assert self.k == len(self.indices) >= 1
        assert self.indices[0] >= 0
        assert all(b > a for a, b in zip(self.indices, self.indices[1:]))

    @classmethod
    def of(cls, indices):
        idx = tuple(int(i) for i in sorted(indices))
        assert len(set(idx)) == len(idx), "duplicate indices"
        return cls(indices=idx, k=len(idx))


@dataclass(frozen=True)
class SamplerSpec:
    """How row subsets are drawn. `lam` is the regularization inside the k-DPP kernel."""

    kind: str = "uniform_without_replacement"
    k: int = 1
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")

    def to_dict(self):
        return {"kind": self.kind, "k": self.k, "lambda": self.lam}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d.get("kind", "uniform_without_replacement"), k=int(d.get("k", 1)),
                   lam=float(d.get("lambda", d.get("lam", 0.0))))


@dataclass(frozen=True)
class ExpectationMode:
    """Exact enumeration (within budget) or Monte-Carlo with a sample count."""

    kind: str = "exact_enumeration"
    mc_samples: int = 0
    enumeration_budget: int = DEFAULT_ENUMERATION_BUDGET

    def __post_init__(self):
        if self.kind not in MODE_KINDS:
            raise ValueError(f"unknown expectation mode {self.kind!r}")
        if self.kind == "monte_carlo" and self.mc_samples < 2:
            raise ValueError("monte_carlo needs mc_samples >= 2")

    def to_dict(self):
        return {"kind": self.kind, "mc_samples": self.mc_samples,
                "enumeration_budget": self.enumeration_budget}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d.get("kind", "exact_enumeration"), mc_samples=int(d.get("mc_samples", 0)),
                   enumeration_budget=int(d.get("enumeration_budget", DEFAULT_ENUMERATION_BUDGET)))


def exact_mode(budget=DEFAULT_ENUMERATION_BUDGET):
    return ExpectationMode(kind="exact_enumeration", enumeration_budget=budget)


def mc_mode(mc_samples, budget=DEFAULT_ENUMERATION_BUDGET):
    return ExpectationMode(kind="monte_carlo", mc_samples=mc_samples, enumeration_budget=budget)


# ------------------------------------------------------------------- kernels

def reg_pinv_apply(J_S, lam, v):
    """Apply the regularized pseudoinverse: J_S^T (J_S J_S^T + lam I)^{-1} v.

    For lam > 0 this is computed through the k x k system (the cheap Woodbury
    side). For lam = 0 an SVD pseudoinverse with relative cutoff PINV_CUTOFF is
    used; a numerically zero block raises SingularBlock.
    """
    J_S = np.atleast_2d(np.asarray(J_S, dtype=float))
    v = np.asarray(v, dtype=float)
    k = J_S.shape[0]
    assert v.shape == (k,)
    if lam > 0:
        G = J_S @ J_S.T
        G[np.diag_indices(k)] += lam
        return J_S.T @ np.linalg.solve(G, v)
    U, s, Vt = np.linalg.svd(J_S, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        raise SingularBlock("zero block with lambda = 0")
    inv = np.where(s > PINV_CUTOFF * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return Vt.T @ (inv * (U.T @ v))


def projector(J_S, lam):
    """Regularized projector P(S) = J_S^{+(lam)} J_S onto the sampled row space.

    Eigenvalues are s_i^2/(s_i^2 + lam) on the block's right singular vectors;
    for lam = 0 the rank-revealing cutoff makes P an orthogonal projector.
    """
    J_S = np.atleast_2d(np.asarray(J_S, dtype=float))
    _, s, Vt = np.linalg.svd(J_S, full_matrices=False)
    if lam > 0:
        w = s * s / (s * s + lam)
    else:
        if s.size == 0 or s[0] <= 0.0:
            raise SingularBlock("zero block with lambda = 0")
        w = (s > PINV_CUTOFF * s[0]).astype(float)
    P = (Vt.T * w) @ Vt
    return 0.5 * (P + P.T)


def colex_subsets(m, k):
    """Yield all k-subsets of range(m) as tuples, in colexicographic order."""
    assert 0 <= k <= m
    if k == 0:
        yield ()
        return
    for j in range(k - 1, m):
        for rest in colex_subsets(j, k - 1):
            yield rest + (j,)


def pairwise_sum(terms):
    """Deterministic pairwise (binary-counter) reduction of an iterable of arrays."""
    stack = []  # list of (level, value)
    for term in terms:
        value = np.array(term, dtype=float, copy=True)
        level = 0
        while stack and stack[-1][0] == level:
            _, prev = stack.pop()
            value = prev + value
            level += 1
        stack.append((level, value))
    if not stack:
        raise ValueError("empty reduction")
    total = stack[-1][1]
    for _, prev in reversed(stack[:-1]):
        total = total + prev
    return total


def _check_budget(m, k, budget):
    count = math.comb(m, k)
    if count > budget:
        raise BudgetExceeded(f"C({m},{k}) = {count} exceeds budget {budget}")
    return count


def dpp_weight_table(J, k, lam, budget=DEFAULT_ENUMERATION_BUDGET):
    """All k-subsets in colex order with normalized det(J_S J_S^T + lam I) weights."""
    J = np.asarray(J, dtype=float)
    m = J.shape[0]
    _check_budget(m, k, budget)
    subsets = list(colex_subsets(m, k))
    dets = np.empty(len(subsets))
    eye = lam * np.eye(k)
    for i, S in enumerate(subsets):
        B = J[list(S), :]
        dets[i] = np.linalg.det(B @ B.T + eye)
    total = float(pairwise_sum(dets.reshape(-1, 1)).item()) if len(dets) else 0.0
    if not (total > 0):
        raise SingularBlock("k-DPP kernel has zero total mass")
    return subsets, dets / total


def sample(sampler: SamplerSpec, J, rng) -> SampleSet:
    """Draw one row subset. Uniform: every k-subset equiprobable. k-DPP:
    probability proportional to det(J_S J_S^T + lam I), sampled by inverse CDF
    over the explicit subset table."""
    J = np.asarray(J, dtype=float)
    m = J.shape[0]
    k = sampler.k
    assert 1 <= k <= m
    if sampler.kind == "uniform_without_replacement":
        idx = rng.choice(m, size=k, replace=False)
        return SampleSet.of(idx)
    subsets, weights = dpp_weight_table(J, k, sampler.lam)
    cum = np.cumsum(weights)
    u = rng.random() * cum[-1]
    i = int(np.searchsorted(cum, u, side="right"))
    i = min(i, len(subsets) - 1)
    return SampleSet.of(subsets[i])


def expect_matrix(f, m, sampler: SamplerSpec, mode: ExpectationMode, rng=None, J=None):
    """Expectation over row subsets of an array-valued function.

    Exact mode returns (sum_S Pr[S] f(S), None) over all C(m,k) subsets in
    colex order with pairwise reduction. Monte-Carlo mode returns the sample
    mean and the entrywise standard error of the mean.
    """
    k = sampler.k
    if sampler.kind == "k_dpp" and J is None:
        raise ValueError("k-DPP expectations need J for the weight table")
    if mode.kind == "exact_enumeration":
        _check_budget(m, k, mode.enumeration_budget)
        if sampler.kind == "uniform_without_replacement":
            count = math.comb(m, k)
            acc = pairwise_sum(f(SampleSet.of(S)) for S in colex_subsets(m, k))
            return acc / count, None
        subsets, weights = dpp_weight_table(J, k, sampler.lam, mode.enumeration_budget)
        acc = pairwise_sum(w * f(SampleSet.of(S)) for S, w in zip(subsets, weights))
        return acc, None
    if rng is None:
        raise ValueError("monte_carlo mode needs an rng")
    if sampler.kind == "uniform_without_replacement" and J is None:
        J = np.empty((m, 0))  # sample() only needs the row count
    mean = None
    m2 = None
    for i in range(mode.mc_samples):
        x = np.asarray(f(sample(sampler, J, rng)), dtype=float)
        if mean is None:
            mean = np.zeros_like(x)
            m2 = np.zeros_like(x)
        delta = x - mean
        mean += delta / (i + 1)
        m2 += delta * (x - mean)
    stderr = np.sqrt(m2 / (mode.mc_samples - 1)) / math.sqrt(mode.mc_samples)
    return mean, stderr


def sketch_projector_mc(D, k, n_draws, seed):
    """Monte-Carlo mean and stderr of (Z D)^+ (Z D) over Gaussian sketches Z (k x n).

    Draw i uses the stream keyed by (seed, i) — the same per-draw protocol as
    the solvers' subset streams.
    """
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    assert D.shape == (n, n)
    mean = np.zeros((n, n))
    m2 = np.zeros((n, n))
    for i in range(n_draws):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        Z = rng.standard_normal((k, n))
        P = projector(Z @ D, 0.0)
        delta = P - mean
        mean += delta / (i + 1)
        m2 += delta * (P - mean)
    stderr = np.sqrt(m2 / (n_draws - 1)) / math.sqrt(n_draws)
    return mean, stderr
