"""Spectral quantities that govern convergence rates, and the exact one-step
expectation operators used to verify contraction bounds.

All expectations run through kernels.expect_matrix, so exact enumeration and
Monte Carlo share one code path. Matrix inverse square roots go through
symmetric eigendecompositions with a relative eigenvalue floor; falling below
the floor raises instead of silently regularizing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .kernels import ExpectationMode, SamplerSpec, expect_matrix, projector
from .problems import _encode_matrix

EIG_FLOOR_REL = 1e-14


class IllConditionedPbar(RuntimeError):
    """An expected-projector (or Gram) eigenvalue fell below the relative floor;
    the derived quantities would be dominated by noise."""


def _sym(A):
    return 0.5 * (A + A.T)


def _eigh_floored(A, label):
    """Eigendecomposition of a symmetric PSD matrix, requiring
    lambda_min >= EIG_FLOOR_REL * lambda_max."""
    w, V = np.linalg.eigh(_sym(A))
    floor = EIG_FLOOR_REL * float(w[-1])
    if w[-1] <= 0 or w[0] < floor:
        raise IllConditionedPbar(
            f"{label}: eigenvalue {w[0]:.3e} below floor {floor:.3e}")
    return w, V, floor


def _mat_power(w, V, p):
    return (V * w**p) @ V.T


@dataclass
class SpectralReport:
    """Rate-governing scalars and the matrices they come from.

    alpha = lambda_min(Pbar); beta = lambda_max of the second moment of the
    Pbar-whitened projector; Qbar is Pbar conjugated by (J^T J)^{-1/2}; gamma
    is the reciprocal of lambda_max of the Qbar^{-1}-conjugated second moment.
    Htilde is the function-space Hessian projected onto the model's column
    space; its extreme eigenvalues are recorded for step-size formulas.
    """

    Pbar: np.ndarray
    alpha: float
    beta: float
    Qbar: np.ndarray
    gamma: float
    Htilde_kappa: float
    Htilde_lam_max: float
    Htilde_lam_min: float
    kappa_J: float
    kappa_dem_J: float
    lam: float
    sampler: dict
    mode: dict
    floor: float
    Pbar_stderr: np.ndarray | None = None
    beta_op_stderr: float | None = None
    gamma_op_stderr: float | None = None

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "Htilde_kappa": self.Htilde_kappa,
            "Htilde_lam_max": self.Htilde_lam_max,
            "Htilde_lam_min": self.Htilde_lam_min,
            "kappa_J": self.kappa_J,
            "kappa_dem_J": self.kappa_dem_J,
            "lambda": self.lam,
            "sampler": self.sampler,
            "mode": self.mode,
            "eig_floor": self.floor,
            "Pbar": _encode_matrix(self.Pbar),
            "Qbar": _encode_matrix(self.Qbar),
            "Pbar_stderr_max": (None if self.Pbar_stderr is None
                                else float(self.Pbar_stderr.max())),
            "beta_op_stderr": self.beta_op_stderr,
            "gamma_op_stderr": self.gamma_op_stderr,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text)
        return text


def _kappas(J):
    sv = np.linalg.svd(J, compute_uv=False)
    kappa = float(sv[0] / sv[-1])
    kappa_dem = float(np.linalg.norm(J, "fro") / sv[-1])
    return kappa, kappa_dem


def _htilde(problem, Gm):
    """Projected Hessian (J^T J)^{-1/2} J^T H J (J^T J)^{-1/2}; identity for LLS."""
    if problem.kind == "lls":
        n = problem.n
        return np.eye(n), 1.0, 1.0, 1.0
    K = problem.J.T @ (problem.H @ problem.J)
    Ht = _sym(Gm @ _sym(K) @ Gm)
    w = np.linalg.eigvalsh(Ht)
    if w[0] <= 0:
        raise ValueError(f"projected Hessian not positive definite: {w[0]:.3e}")
    return Ht, float(w[-1] / w[0]), float(w[-1]), float(w[0])


def compute_report(problem, lam, sampler: SamplerSpec, mode: ExpectationMode,
                   seed=0) -> SpectralReport:
    """Compute Pbar, alpha, beta, Qbar, gamma and the conditioning scalars.

    The projector uses regularization `lam`; a k-DPP sampler keeps whatever
    lam its own spec carries (matching them makes Pbar commute with J^T J).
    Monte Carlo runs two passes on separate (seed, 1)/(seed, 2) streams:
    pass one estimates Pbar, pass two plugs it into the beta and gamma
    second moments so the nonlinear whitening does not bias the estimate.
    """
    J = problem.J
    m, n = problem.m, problem.n

    def f_proj(S):
        return projector(J[list(S.indices), :], lam)

    mc = mode.kind == "monte_carlo"
    rng1 = np.random.default_rng(np.random.SeedSequence((seed, 1))) if mc else None
    Pbar, Pbar_stderr = expect_matrix(f_proj, m, sampler, mode, rng=rng1, J=J)
    Pbar = _sym(Pbar)

    w_p, V_p, floor = _eigh_floored(Pbar, "Pbar")
    alpha = float(w_p[0])
    Pm = _mat_power(w_p, V_p, -0.5)

    w_g, V_g, _ = _eigh_floored(J.T @ J, "Gram matrix J^T J")
    Gm = _mat_power(w_g, V_g, -0.5)
    Qbar = _sym(Gm @ Pbar @ Gm)
    w_q, V_q, _ = _eigh_floored(Qbar, "Qbar")
    Qinv = _mat_power(w_q, V_q, -1.0)

    def f_second(S):
        P = f_proj(S)
        X = Pm @ P @ Pm
        Y = Gm @ P @ Qinv @ P @ Gm
        return np.stack([_sym(X @ X), _sym(Y)])

    rng2 = np.random.default_rng(np.random.SeedSequence((seed, 2))) if mc else None
    stacked, stacked_err = expect_matrix(f_second, m, sampler, mode, rng=rng2, J=J)
    beta = float(np.linalg.eigvalsh(_sym(stacked[0]))[-1])
    gamma = 1.0 / float(np.linalg.eigvalsh(_sym(stacked[1]))[-1])

    Ht, Ht_kappa, Ht_max, Ht_min = _htilde(problem, Gm)
    kappa_J, kappa_dem_J = _kappas(J)

    return SpectralReport(
        Pbar=Pbar,
        alpha=alpha,
        beta=beta,
        Qbar=Qbar,
        gamma=gamma,
        Htilde_kappa=Ht_kappa,
        Htilde_lam_max=Ht_max,
        Htilde_lam_min=Ht_min,
        kappa_J=kappa_J,
        kappa_dem_J=kappa_dem_J,
        lam=lam,
        sampler=sampler.to_dict(),
        mode=mode.to_dict(),
        floor=floor,
        Pbar_stderr=Pbar_stderr,
        beta_op_stderr=None if stacked_err is None else float(stacked_err[0].max()),
        gamma_op_stderr=None if stacked_err is None else float(stacked_err[1].max()),
    )


# ------------------------------------------------------- expected step matrix

@dataclass
class MSpectrum:
    """Spectrum of the expected step matrix M = Pbar J^+ H J at one lam."""

    lam: float
    eigenvalues: np.ndarray  # complex, length n
    xi: float  # minimum real part

    def to_dict(self):
        return {
            "lambda": self.lam,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "xi": self.xi,
        }


def m_spectrum(problem, lam, sampler: SamplerSpec, mode: ExpectationMode,
               seed=0) -> MSpectrum:
    """General (non-symmetric) eigendecomposition of M = Pbar J^+ H J.

    xi is the minimum real part; imaginary parts are kept untouched. A k-DPP
    sampler's weights are rebuilt with the scan lam so the distribution and
    the projector stay matched.
    """
    assert problem.kind == "llq"
    J = problem.J
    if sampler.kind == "k_dpp" and sampler.lam != lam:
        sampler = replace(sampler, lam=lam)

    def f_proj(S):
        return projector(J[list(S.indices), :], lam)

    rng = (np.random.default_rng(np.random.SeedSequence((seed, 1)))
           if mode.kind == "monte_carlo" else None)
    Pbar, _ = expect_matrix(f_proj, problem.m, sampler, mode, rng=rng, J=J)
    W = np.linalg.pinv(J) @ (problem.H @ J)
    M = _sym(Pbar) @ W
    eig = np.linalg.eigvals(M)
    assert eig.shape == (problem.n,)
    return MSpectrum(lam=lam, eigenvalues=eig, xi=float(eig.real.min()))


def find_lambda0(problem, sampler: SamplerSpec, mode: ExpectationMode, grid,
                 seed=0):
    """Smallest grid lam whose whole suffix has xi > 0; +inf if even the
    largest grid point fails."""
    grid = sorted(float(g) for g in grid)
    assert grid and grid[0] >= 0
    xis = [m_spectrum(problem, g, sampler, mode, seed=seed).xi for g in grid]
    lam0 = math.inf
    for g, xi in zip(reversed(grid), reversed(xis)):
        if xi > 0:
            lam0 = g
        else:
            break
    return lam0


# ------------------------------------------------------- one-step contraction

@dataclass
class OneStepReport:
    """Exact one-step expectation operator and its worst-case contraction
    factor: Euclidean norm for LLS, the Qbar^{-1} norm for LLQ."""

    A: np.ndarray
    factor: float
    eta: float
    lam: float
    norm: str


def one_step_operator(problem, config, mode: ExpectationMode) -> OneStepReport:
    """A_LLS = E[(I - eta P(S))^2]; A_LLQ = E[B(S)^T Qbar^{-1} B(S)] with
    B(S) = I - eta P(S) J^+ H J. The LLQ factor is the largest generalized
    eigenvalue of A relative to Qbar^{-1}, found by congruence with Qbar^{1/2}.
    Exact enumeration only: this is the rigorous verifier.
    """
    assert mode.kind == "exact_enumeration", "the operator check is exact-only"
    J = problem.J
    eta, lam, sampler = config.eta, config.lam, config.sampler
    eye = np.eye(problem.n)

    def f_proj(S):
        return projector(J[list(S.indices), :], lam)

    if problem.kind == "lls":
        def f_step(S):
            B = eye - eta * f_proj(S)
            return _sym(B @ B)

        A, _ = expect_matrix(f_step, problem.m, sampler, mode, J=J)
        factor = float(np.linalg.eigvalsh(_sym(A))[-1])
        return OneStepReport(A=_sym(A), factor=factor, eta=eta, lam=lam,
                             norm="euclidean")

    Pbar, _ = expect_matrix(f_proj, problem.m, sampler, mode, J=J)
    w_g, V_g, _ = _eigh_floored(J.T @ J, "Gram matrix J^T J")
    Gm = _mat_power(w_g, V_g, -0.5)
    Qbar = _sym(Gm @ _sym(Pbar) @ Gm)
    w_q, V_q, _ = _eigh_floored(Qbar, "Qbar")
    Qinv = _mat_power(w_q, V_q, -1.0)
    Qhalf = _mat_power(w_q, V_q, 0.5)
    W = np.linalg.pinv(J) @ (problem.H @ J)

    def f_step(S):
        B = eye - eta * (f_proj(S) @ W)
        return _sym(B.T @ Qinv @ B)

    A, _ = expect_matrix(f_step, problem.m, sampler, mode, J=J)
    factor = float(np.linalg.eigvalsh(_sym(Qhalf @ A @ Qhalf))[-1])
    return OneStepReport(A=_sym(A), factor=factor, eta=eta, lam=lam,
                         norm="Qbar_inv")


# ------------------------------------------------------------ rate predictors

@dataclass
class RatePredictions:
    """Per-step contraction factors predicted from a SpectralReport, plus the
    mini-batch SGD convergence-constant upper bound when the instance is given."""

    sngd_lls: float
    spring_lls: float
    sngd_llq: float
    ngd_llq: float
    alpha_sgd: float | None = None
    sgd_llq: float | None = None
    C_tilde: float | None = None

    def to_dict(self):
        return {
            "sngd_lls": self.sngd_lls,
            "spring_lls": self.spring_lls,
            "sngd_llq": self.sngd_llq,
            "ngd_llq": self.ngd_llq,
            "alpha_sgd": self.alpha_sgd,
            "sgd_llq": self.sgd_llq,
            "C_tilde": self.C_tilde,
        }


def rate_predictors(report: SpectralReport, problem=None) -> RatePredictions:
    """Predicted per-step factors: 1 - alpha (subsampled natural gradient on
    least squares at unit step), 1 - sqrt(alpha/beta) (its momentum variant),
    1 - alpha*gamma/kappa(Htilde) (quadratic losses), 1 - 1/kappa(Htilde)
    (full-batch natural gradient). With the instance supplied, also the SGD
    convergence-constant bound
        alpha_sgd <= C_tilde * kappa(Htilde) * k * [lam_min(K)/trace(K)] * [lam_min(K)/lam_max(K)],
    K = J^T H J, C_tilde = max_i ||(HJ)_i|| / (2 lam_max(Htilde) ||J_i||),
    and the corresponding factor 1 - alpha_sgd.
    """
    alpha, beta, gamma = report.alpha, report.beta, report.gamma
    kap_h = report.Htilde_kappa
    preds = RatePredictions(
        sngd_lls=1.0 - alpha,
        spring_lls=1.0 - math.sqrt(alpha / beta),
        sngd_llq=1.0 - alpha * gamma / kap_h,
        ngd_llq=1.0 - 1.0 / kap_h,
    )
    if problem is None:
        return preds
    J = problem.J
    HJ = problem.H @ J if problem.kind == "llq" else J
    row_J = np.linalg.norm(J, axis=1)
    row_HJ = np.linalg.norm(HJ, axis=1)
    assert np.all(row_J > 0)
    C_tilde = 0.5 * float(np.max(row_HJ / row_J)) / report.Htilde_lam_max
    wk = np.linalg.eigvalsh(_sym(J.T @ HJ))
    assert wk[0] > 0
    k = int(report.sampler["k"])
    alpha_sgd = C_tilde * kap_h * k * (wk[0] / float(wk.sum())) * (wk[0] / wk[-1])
    preds.alpha_sgd = float(alpha_sgd)
    preds.sgd_llq = 1.0 - float(alpha_sgd)
    preds.C_tilde = C_tilde
    return preds
