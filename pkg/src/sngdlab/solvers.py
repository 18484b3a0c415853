"""Solver steps and full runs: SGD, NGD, SNGD, SPRING, regularized Kaczmarz, ARK.

Stream coupling: the sample drawn at iteration t comes from an RNG keyed by
(seed, t) only — never by algorithm — so two solvers built from the same config
see identical subset sequences. That makes the pathwise equivalences
(SNGD(eta=1) vs Kaczmarz, SPRING vs ARK) directly testable.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .kernels import SamplerSpec, SampleSet, SingularBlock, reg_pinv_apply, sample
from .problems import LLQProblem, LLSProblem

ALGORITHMS = ("sgd", "ngd", "sngd", "spring", "rk", "ark")
DIV_FACTOR = 1e12

# Key for the theta0 stream; iteration streams use (seed, t) with t < T, so this
# can never collide with them.
_INIT_STREAM_KEY = 2**63


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str
    eta: float = 1.0
    lam: float = 0.0
    mu: float = 0.0
    eta_tilde: float | None = None
    k: int = 1
    T: int = 100
    seed: int = 0
    sampler: SamplerSpec | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not (0.0 <= self.mu < 1.0):
            raise ValueError("mu must lie in [0, 1)")
        if self.algorithm == "ark" and self.mu == 0.0:
            raise ValueError("ark needs mu > 0 (the derived step size divides by mu)")
        if self.T < 0 or self.k < 1:
            raise ValueError("need T >= 0 and k >= 1")
        if self.sampler is None:
            object.__setattr__(
                self, "sampler", SamplerSpec(kind="uniform_without_replacement", k=self.k, lam=self.lam)
            )
        elif self.sampler.k != self.k:
            raise ValueError(f"sampler.k={self.sampler.k} disagrees with config k={self.k}")

    @property
    def eta_tilde_effective(self):
        """ARK step size; defaults to 1 - (1 - eta)/mu."""
        if self.eta_tilde is not None:
            return self.eta_tilde
        assert self.mu > 0
        return 1.0 - (1.0 - self.eta) / self.mu

    def to_dict(self):
        return {
            "algorithm": self.algorithm,
            "eta": self.eta,
            "lambda": self.lam,
            "mu": self.mu,
            "eta_tilde": self.eta_tilde,
            "k": self.k,
            "T": self.T,
            "seed": self.seed,
            "sampler": self.sampler.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        sampler = SamplerSpec.from_dict(d["sampler"]) if "sampler" in d and d["sampler"] else None
        return cls(
            algorithm=d["algorithm"],
            eta=float(d.get("eta", 1.0)),
            lam=float(d.get("lambda", d.get("lam", 0.0))),
            mu=float(d.get("mu", 0.0)),
            eta_tilde=(None if d.get("eta_tilde") is None else float(d["eta_tilde"])),
            k=int(d.get("k", 1)),
            T=int(d.get("T", 100)),
            seed=int(d.get("seed", 0)),
            sampler=sampler,
        )


@dataclass
class SolverState:
    theta: np.ndarray
    phi: np.ndarray
    t: int = 0


def init_state(problem, theta0):
    theta0 = np.asarray(theta0, dtype=float)
    assert theta0.shape == (problem.n,)
    return SolverState(theta=theta0.copy(), phi=np.zeros(problem.n), t=0)


@dataclass(frozen=True)
class WeightedSGDSpec:
    """Importance weights for SGD: L_i is the row's local curvature scale
    (||J_i||^2 for LLS, ||J_i|| * ||(HJ)_i|| for LLQ), w_i = L_i / mean(L),
    sampling probabilities p_i = L_i / sum(L)."""

    L: np.ndarray
    w: np.ndarray
    p: np.ndarray

    @classmethod
    def from_problem(cls, problem, HJ=None):
        J = problem.J
        if problem.kind == "lls":
            L = np.einsum("ij,ij->i", J, J)
        else:
            if HJ is None:
                HJ = problem.H @ J
            L = np.linalg.norm(J, axis=1) * np.linalg.norm(HJ, axis=1)
        if not np.all(L > 0):
            raise ValueError("weighted SGD needs strictly positive row scales")
        w = L / L.mean()
        p = L / L.sum()
        return cls(L=L, w=w, p=p)


@dataclass
class RunContext:
    """Per-problem precomputation shared across runs: Gram matrix, the reduced
    Hessian J^T H J for O(n^2) loss evaluation, and SGD weights."""

    G: np.ndarray
    K: np.ndarray | None = None
    loss_star: float = 0.0
    sgd: WeightedSGDSpec | None = None
    qinv: np.ndarray | None = None


def build_context(problem, need_sgd=False, qinv=None):
    J = problem.J
    G = J.T @ J
    if problem.kind == "lls":
        ctx = RunContext(G=G, K=None, loss_star=0.0, qinv=qinv)
        if need_sgd:
            ctx.sgd = WeightedSGDSpec.from_problem(problem)
        return ctx
    HJ = problem.H @ J
    K = J.T @ HJ
    K = 0.5 * (K + K.T)
    u = J @ problem.theta_star
    loss_star = 0.5 * float(u @ (problem.H @ u)) + float(problem.q @ u) + problem.c
    ctx = RunContext(G=G, K=K, loss_star=loss_star, qinv=qinv)
    if need_sgd:
        ctx.sgd = WeightedSGDSpec.from_problem(problem, HJ=HJ)
    return ctx


def function_space_gradient(problem, theta, S=None):
    """Rows S of the function-space gradient: J_S theta - b_S for LLS,
    H_S (J theta) + q_S for LLQ (one m-vector product, then row extraction of H).
    S=None returns the full vector."""
    if problem.kind == "lls":
        if S is None:
            return problem.J @ theta - problem.b
        idx = list(S.indices) if isinstance(S, SampleSet) else list(S)
        return problem.J[idx, :] @ theta - problem.b[idx]
    v = problem.J @ theta
    if S is None:
        return problem.H @ v + problem.q
    idx = list(S.indices) if isinstance(S, SampleSet) else list(S)
    return problem.H[idx, :] @ v + problem.q[idx]


def _block(problem, S):
    idx = list(S.indices) if isinstance(S, SampleSet) else list(S)
    return problem.J[idx, :], idx


def sngd_step(problem, state, S, config):
    """theta' = theta - eta * J_S^{+(lam)} r_S. Also the Kaczmarz step at eta=1."""
    J_S, _ = _block(problem, S)
    r = function_space_gradient(problem, state.theta, S)
    theta = state.theta - config.eta * reg_pinv_apply(J_S, config.lam, r)
    return SolverState(theta=theta, phi=state.phi, t=state.t + 1)


def spring_step(problem, state, S, config):
    """phi' = mu*phi + J_S^{+(lam)}(r_S - mu*J_S phi); theta' = theta - eta*phi'."""
    J_S, _ = _block(problem, S)
    r = function_space_gradient(problem, state.theta, S)
    u = r - config.mu * (J_S @ state.phi)
    phi = config.mu * state.phi + reg_pinv_apply(J_S, config.lam, u)
    theta = state.theta - config.eta * phi
    return SolverState(theta=theta, phi=phi, t=state.t + 1)


def ark_step(problem, state, S, config):
    """Accelerated Kaczmarz (LLS only): w = J_S^{+(lam)}(J_S theta - b_S);
    phi' = mu*(phi - w); theta' = theta - w + eta_tilde*phi'."""
    assert problem.kind == "lls", "ark is defined for least squares only"
    J_S, idx = _block(problem, S)
    w = reg_pinv_apply(J_S, config.lam, J_S @ state.theta - problem.b[idx])
    phi = config.mu * (state.phi - w)
    theta = state.theta - w + config.eta_tilde_effective * phi
    return SolverState(theta=theta, phi=phi, t=state.t + 1)


def ngd_step(problem, state, config):
    """Full-batch natural gradient: theta' = theta - eta * J^{+(lam)} r."""
    r = function_space_gradient(problem, state.theta, S=None)
    theta = state.theta - config.eta * reg_pinv_apply(problem.J, config.lam, r)
    return SolverState(theta=theta, phi=state.phi, t=state.t + 1)


def sgd_step(problem, state, rng, config, weights: WeightedSGDSpec):
    """Mini-batch weighted SGD: k i.i.d. draws with probabilities p_i, update
    theta' = theta - (eta/k) * sum_i (1/w_i) J_i^T r_i."""
    idx = rng.choice(problem.m, size=config.k, replace=True, p=weights.p)
    idx = [int(i) for i in idx]
    r = function_space_gradient(problem, state.theta, idx)
    step = problem.J[idx, :].T @ (r / weights.w[idx])
    theta = state.theta - (config.eta / config.k) * step
    return SolverState(theta=theta, phi=state.phi, t=state.t + 1)


# ------------------------------------------------------------------- traces

@dataclass
class Trace:
    """Per-iteration records of a run; one row per recorded state (t = 0..T)."""

    t: np.ndarray
    err_sq: np.ndarray
    err_JtJ: np.ndarray
    loss: np.ndarray
    diverged_at: np.ndarray  # per-record flag: err_sq > div_factor * err_sq(0)
    err_Qinv: np.ndarray | None = None
    sample_indices: list | None = None
    error: str | None = None
    config: dict | None = None
    div_factor: float = DIV_FACTOR

    @property
    def diverged(self):
        return bool(self.diverged_at.any())

    @property
    def final_err_sq(self):
        return float(self.err_sq[-1])

    def time_to_tol(self, rel_tol=1e-6):
        """First recorded t with err_sq <= rel_tol * err_sq(0); inf if never."""
        target = rel_tol * float(self.err_sq[0])
        hit = np.nonzero(self.err_sq <= target)[0]
        return float(self.t[hit[0]]) if hit.size else math.inf

    def to_csv(self, path=None):
        """CSV with 17-significant-digit floats; returns the text when path is None."""
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["t", "err_sq", "err_JtJ", "err_Qinv", "loss", "diverged"])
        for i in range(len(self.t)):
            qv = "" if self.err_Qinv is None else f"{self.err_Qinv[i]:.17g}"
            writer.writerow([
                int(self.t[i]),
                f"{self.err_sq[i]:.17g}",
                f"{self.err_JtJ[i]:.17g}",
                qv,
                f"{self.loss[i]:.17g}",
                int(self.diverged_at[i]),
            ])
        text = out.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dict(self):
        d = {
            "config": self.config,
            "div_factor": self.div_factor,
            "diverged": self.diverged,
            "error": self.error,
            "t": self.t.tolist(),
            "err_sq": self.err_sq.tolist(),
            "err_JtJ": self.err_JtJ.tolist(),
            "err_Qinv": None if self.err_Qinv is None else self.err_Qinv.tolist(),
            "loss": self.loss.tolist(),
            "diverged_at": self.diverged_at.astype(int).tolist(),
        }
        if self.sample_indices is not None:
            d["sample_indices"] = [list(s) for s in self.sample_indices]
        return d

    def to_json(self, path=None):
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text)
        return text


def iteration_rng(seed, t):
    """The (seed, t)-keyed stream shared by every algorithm."""
    return np.random.default_rng(np.random.SeedSequence((seed, t)))


def default_theta0(problem, seed):
    """Unit-norm random offset from the optimum, from the (seed, init) stream."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, _INIT_STREAM_KEY)))
    v = rng.standard_normal(problem.n)
    return problem.theta_star + v / np.linalg.norm(v)


def _loss(problem, ctx, e, err_JtJ):
    # exact under consistency: the loss is its minimum plus the quadratic form
    # of the error in the reduced Hessian (Gram matrix for LLS)
    if problem.kind == "lls":
        return 0.5 * err_JtJ
    return ctx.loss_star + 0.5 * float(e @ (ctx.K @ e))


def run(problem, config: SolverConfig, *, theta0=None, ctx=None,
        div_factor=DIV_FACTOR, record_samples=False, qinv=None) -> Trace:
    """Execute config.T iterations and record the Trace.

    Stops early (flagging divergence) when err_sq exceeds div_factor times its
    starting value or turns non-finite. Step errors truncate the Trace and set
    its error marker. err_Qinv is recorded when a qinv matrix is supplied
    (directly or through ctx).
    """
    if config.algorithm == "rk":
        # Kaczmarz is the eta=1 natural-gradient step; same code path, forced step size
        config = replace(config, eta=1.0)
    if ctx is None:
        ctx = build_context(problem, need_sgd=(config.algorithm == "sgd"), qinv=qinv)
    if config.algorithm == "sgd" and ctx.sgd is None:
        ctx.sgd = WeightedSGDSpec.from_problem(problem)
    if qinv is None:
        qinv = ctx.qinv
    state = init_state(problem, default_theta0(problem, config.seed) if theta0 is None else theta0)

    ts, errs, errs_g, losses, flags = [], [], [], [], []
    errs_q = [] if qinv is not None else None
    samples = [] if record_samples else None
    err0 = None
    error_marker = None

    def record(st):
        nonlocal err0
        e = st.theta - problem.theta_star
        err_sq = float(e @ e)
        err_g = float(e @ (ctx.G @ e))
        ts.append(st.t)
        errs.append(err_sq)
        errs_g.append(err_g)
        losses.append(_loss(problem, ctx, e, err_g))
        if errs_q is not None:
            errs_q.append(float(e @ (qinv @ e)))
        if err0 is None:
            err0 = err_sq
        bad = (not math.isfinite(err_sq)) or err_sq > div_factor * err0
        flags.append(bad)
        return bad

    record(state)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for t in range(config.T):
            try:
                if config.algorithm == "ngd":
                    state = ngd_step(problem, state, config)
                elif config.algorithm == "sgd":
                    state = sgd_step(problem, state, iteration_rng(config.seed, t), config, ctx.sgd)
                else:
                    S = sample(config.sampler, problem.J, iteration_rng(config.seed, t))
                    if samples is not None:
                        samples.append(S.indices)
                    if config.algorithm in ("sngd", "rk"):
                        state = sngd_step(problem, state, S, config)
                    elif config.algorithm == "spring":
                        state = spring_step(problem, state, S, config)
                    else:
                        state = ark_step(problem, state, S, config)
            except SingularBlock as exc:
                error_marker = f"{type(exc).__name__}: {exc}"
                break
            if record(state):
                break

    return Trace(
        t=np.asarray(ts, dtype=int),
        err_sq=np.asarray(errs),
        err_JtJ=np.asarray(errs_g),
        loss=np.asarray(losses),
        diverged_at=np.asarray(flags, dtype=bool),
        err_Qinv=None if errs_q is None else np.asarray(errs_q),
        sample_indices=samples,
        error=error_marker,
        config=config.to_dict(),
        div_factor=div_factor,
    )


# --------------------------------------------------------- equivalence checks

@dataclass
class EquivalenceReport:
    """Maximum relative drifts between coupled solver pairs over a run."""

    sngd_rk: float
    spring_ark_phi: float
    spring_ark_theta: float
    T: int
    config: dict

    def to_dict(self):
        return {
            "sngd_vs_rk_max_rel_dev": self.sngd_rk,
            "spring_vs_ark_phi_max_rel_dev": self.spring_ark_phi,
            "spring_vs_ark_theta_max_rel_dev": self.spring_ark_theta,
            "T": self.T,
            "config": self.config,
        }


def verify_equivalences(problem: LLSProblem, config: SolverConfig, T: int) -> EquivalenceReport:
    """Step four coupled solvers in lockstep on identical sample streams.

    (a) SNGD with eta=1 against regularized Kaczmarz (same iterates).
    (b) SPRING(eta, mu) against ARK(eta_tilde = 1 - (1-eta)/mu), whose iterates
        are the transformed pair phi_ark = -mu*phi, theta_ark = theta - mu*phi.
    Deviations are normalized by 1 + ||theta0|| + current iterate magnitudes.
    """
    assert problem.kind == "lls"
    assert config.mu > 0, "the transformation divides by mu"
    cfg_sngd = replace(config, algorithm="sngd", eta=1.0, T=T)
    cfg_rk = replace(config, algorithm="rk", T=T)
    cfg_spring = replace(config, algorithm="spring", T=T)
    cfg_ark = replace(config, algorithm="ark", T=T)

    theta0 = default_theta0(problem, config.seed)
    scale0 = 1.0 + float(np.linalg.norm(theta0))
    s_sngd = init_state(problem, theta0)
    s_rk = init_state(problem, theta0)
    s_spring = init_state(problem, theta0)
    s_ark = init_state(problem, theta0)

    dev_a = dev_phi = dev_theta = 0.0
    for t in range(T):
        S = sample(config.sampler, problem.J, iteration_rng(config.seed, t))
        s_sngd = sngd_step(problem, s_sngd, S, cfg_sngd)
        s_rk = sngd_step(problem, s_rk, S, replace(cfg_rk, eta=1.0))
        s_spring = spring_step(problem, s_spring, S, cfg_spring)
        s_ark = ark_step(problem, s_ark, S, cfg_ark)

        scale = scale0 + float(np.linalg.norm(s_sngd.theta))
        dev_a = max(dev_a, float(np.linalg.norm(s_sngd.theta - s_rk.theta)) / scale)
        mu_phi = config.mu * s_spring.phi
        scale_b = scale0 + float(np.linalg.norm(s_spring.theta)) + float(np.linalg.norm(mu_phi))
        dev_phi = max(dev_phi, float(np.linalg.norm(s_ark.phi + mu_phi)) / scale_b)
        dev_theta = max(dev_theta, float(np.linalg.norm(s_ark.theta - (s_spring.theta - mu_phi))) / scale_b)

    return EquivalenceReport(
        sngd_rk=dev_a,
        spring_ark_phi=dev_phi,
        spring_ark_theta=dev_theta,
        T=T,
        config=config.to_dict(),
    )
