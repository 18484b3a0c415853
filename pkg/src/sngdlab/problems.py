"""Problem instances and generators.

Two problem kinds are supported: consistent linear least squares (LLS) and
strongly consistent linear least quadratics (LLQ), i.e. a linear model composed
with a strongly convex quadratic loss whose minimizer is realizable by the
model. Generators enforce the consistency requirements by construction and
certify them numerically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RANK_TOL = 1e-12   # relative to sigma_max
CONS_TOL = 1e-10

GENERATOR_KINDS = ("gaussian_rows", "svd_conditioned", "diag_for_sketch")


def _as_matrix(a, name):
    a = np.asarray(a, dtype=float)
    assert a.ndim == 2, f"{name} must be 2-d"
    return a


def _as_vector(a, name):
    a = np.asarray(a, dtype=float)
    assert a.ndim == 1, f"{name} must be 1-d"
    return a


@dataclass
class LLSProblem:
    """Consistent least-squares instance: minimize 0.5*||J theta - b||^2 with b = J theta_star."""

    J: np.ndarray
    b: np.ndarray
    theta_star: np.ndarray
    generator: dict | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.J = _as_matrix(self.J, "J")
        self.b = _as_vector(self.b, "b")
        self.theta_star = _as_vector(self.theta_star, "theta_star")
        m, n = self.J.shape
        if m < n:
            raise ValueError(f"need m >= n, got m={m} n={n}")
        assert self.b.shape == (m,) and self.theta_star.shape == (n,)
        self.m, self.n = m, n

    @property
    def kind(self):
        return "lls"

    def validate(self, rank_tol=RANK_TOL, cons_tol=CONS_TOL):
        """Certify the rank and consistency invariants; raises ValueError on failure."""
        sv = np.linalg.svd(self.J, compute_uv=False)
        if sv[-1] <= rank_tol * sv[0]:
            raise ValueError(f"J is numerically rank deficient: sv ratio {sv[-1] / sv[0]:.3e}")
        resid = np.linalg.norm(self.J @ self.theta_star - self.b)
        scale = np.linalg.norm(self.b)
        if resid > cons_tol * max(scale, 1e-300):
            raise ValueError(f"inconsistent instance: relative residual {resid / scale:.3e}")
        return self

    def to_dict(self):
        d = {
            "kind": "lls",
            "m": self.m,
            "n": self.n,
            "J": _encode_matrix(self.J),
            "b": self.b.tolist(),
            "theta_star": self.theta_star.tolist(),
        }
        if self.generator is not None:
            d["generator"] = self.generator
        return d


@dataclass
class LLQProblem:
    """Strongly consistent least-quadratics instance.

    Loss over model outputs u = J theta is 0.5*u^T H u + q^T u + c with H
    symmetric positive definite. Strong consistency: H J theta_star + q = 0
    and range(HJ) is contained in range(J).
    """

    J: np.ndarray
    H: np.ndarray
    q: np.ndarray
    c: float
    theta_star: np.ndarray
    generator: dict | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.J = _as_matrix(self.J, "J")
        self.H = _as_matrix(self.H, "H")
        self.q = _as_vector(self.q, "q")
        self.theta_star = _as_vector(self.theta_star, "theta_star")
        self.c = float(self.c)
        m, n = self.J.shape
        if m < n:
            raise ValueError(f"need m >= n, got m={m} n={n}")
        assert self.H.shape == (m, m) and self.q.shape == (m,) and self.theta_star.shape == (n,)
        if not np.allclose(self.H, self.H.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(self.H).max()))):
            raise ValueError("H must be symmetric")
        self.m, self.n = m, n

    @property
    def kind(self):
        return "llq"

    def validate(self, rank_tol=RANK_TOL, cons_tol=CONS_TOL, pd_check=True):
        """Certify rank, positive definiteness, and both strong-consistency conditions."""
        sv = np.linalg.svd(self.J, compute_uv=False)
        if sv[-1] <= rank_tol * sv[0]:
            raise ValueError(f"J is numerically rank deficient: sv ratio {sv[-1] / sv[0]:.3e}")
        if pd_check:
            try:
                np.linalg.cholesky(self.H)
            except np.linalg.LinAlgError:
                raise ValueError("H is not numerically positive definite") from None
        # condition (1): the quadratic's minimizer lies at J theta_star
        r1 = np.linalg.norm(self.H @ (self.J @ self.theta_star) + self.q)
        if r1 > cons_tol * max(np.linalg.norm(self.q), 1e-300):
            raise ValueError(f"strong consistency (1) fails: relative residual {r1:.3e}")
        # condition (2): range(HJ) inside range(J), via the orthogonal projector onto range(J)
        HJ = self.H @ self.J
        Jp = np.linalg.pinv(self.J, rcond=rank_tol)
        r2 = np.linalg.norm(HJ - self.J @ (Jp @ HJ))
        if r2 > cons_tol * np.linalg.norm(HJ):
            raise ValueError(f"strong consistency (2) fails: relative residual {r2 / np.linalg.norm(HJ):.3e}")
        return self

    def to_dict(self):
        d = {
            "kind": "llq",
            "m": self.m,
            "n": self.n,
            "J": _encode_matrix(self.J),
            "H": _encode_matrix(self.H),
            "q": self.q.tolist(),
            "c": self.c,
            "theta_star": self.theta_star.tolist(),
        }
        if self.generator is not None:
            d["generator"] = self.generator
        return d


@dataclass(frozen=True)
class GeneratorSpec:
    """Declarative recipe for a random instance; generation is a pure function of the spec."""

    kind: str
    m: int
    n: int
    decay_exponent: float = 1.0
    kappa_J: float = 1.0
    kappa_H: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if not (self.m >= self.n >= 1):
            raise ValueError(f"need m >= n >= 1, got m={self.m} n={self.n}")
        if self.decay_exponent < 0:
            raise ValueError("decay_exponent must be >= 0")
        if self.kappa_J < 1 or self.kappa_H < 1:
            raise ValueError("condition-number targets must be >= 1")

    def to_dict(self):
        return {
            "kind": self.kind,
            "m": self.m,
            "n": self.n,
            "decay_exponent": self.decay_exponent,
            "kappa_J": self.kappa_J,
            "kappa_H": self.kappa_H,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            m=int(d["m"]),
            n=int(d["n"]),
            decay_exponent=float(d.get("decay_exponent", 1.0)),
            kappa_J=float(d.get("kappa_J", 1.0)),
            kappa_H=float(d.get("kappa_H", 1.0)),
            seed=int(d.get("seed", 0)),
        )


def _rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed))


def gen_gaussian_lls(spec: GeneratorSpec) -> LLSProblem:
    """Rows of J i.i.d. zero-mean Gaussian; component variances follow i^(-decay_exponent).

    The covariance is realized diagonally (eigenbasis = standard basis), so its
    i-th eigenvalue is i^(-decay_exponent) times the first. b := J theta_star
    exactly, making the system consistent by construction.
    """
    assert spec.kind == "gaussian_rows"
    rng = _rng(spec.seed)
    variances = (1.0 + np.arange(spec.n)) ** (-spec.decay_exponent)
    J = rng.standard_normal((spec.m, spec.n)) * np.sqrt(variances)
    theta_star = rng.standard_normal(spec.n)
    b = J @ theta_star
    prob = LLSProblem(J=J, b=b, theta_star=theta_star, generator=spec.to_dict())
    return prob.validate()


def gen_conditioned_llq(spec: GeneratorSpec) -> LLQProblem:
    """Instance with pinned condition numbers and strong consistency by construction.

    J = U diag(s) V^T with geometric singular values spanning [1/kappa_J, 1].
    H = U A U^T + (I - U U^T), where A is SPD with geometric spectrum spanning
    [1/kappa_H, 1] in a random eigenbasis; the complement block is the identity
    (it never influences the iterates under strong consistency). q := -H J theta_star,
    so the quadratic's minimizer is exactly J theta_star; c defaults to 0.
    """
    assert spec.kind == "svd_conditioned"
    rng = _rng(spec.seed)
    m, n = spec.m, spec.n
    U, _ = np.linalg.qr(rng.standard_normal((m, n)))
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    W, _ = np.linalg.qr(rng.standard_normal((n, n)))
    sv = np.geomspace(1.0, 1.0 / spec.kappa_J, n)
    a_eigs = np.geomspace(1.0, 1.0 / spec.kappa_H, n)
    J = (U * sv) @ V.T
    A = (W * a_eigs) @ W.T
    # H = U A U^T + (I - U U^T): the complement block is identity, so U_perp
    # never needs to be materialized.
    H = U @ A @ U.T
    H -= U @ U.T
    H[np.diag_indices(m)] += 1.0
    H = 0.5 * (H + H.T)  # kill roundoff asymmetry
    theta_star = rng.standard_normal(n)
    q = -(H @ (J @ theta_star))
    prob = LLQProblem(J=J, H=H, q=q, c=0.0, theta_star=theta_star, generator=spec.to_dict())
    # full certificates are O(m^2 n); run them wherever that is cheap
    prob.validate(pd_check=m <= 4000)
    sv_out = np.linalg.svd(J, compute_uv=False)
    kappa_out = sv_out[0] / sv_out[-1]
    assert abs(kappa_out - spec.kappa_J) <= 1e-8 * spec.kappa_J, kappa_out
    return prob


def gen_diag_sketch(spec: GeneratorSpec) -> np.ndarray:
    """Diagonal matrix with nonincreasing positive entries for sketch experiments.

    kappa_J > 1 selects the geometric law spanning [kappa_J, 1] (n=3, kappa_J=4
    gives diag(4,2,1)); otherwise entries follow the polynomial law i^(-decay_exponent).
    """
    assert spec.kind == "diag_for_sketch"
    if spec.kappa_J > 1.0:
        d = np.geomspace(spec.kappa_J, 1.0, spec.n)
    else:
        d = (1.0 + np.arange(spec.n)) ** (-spec.decay_exponent)
    assert np.all(d > 0) and np.all(np.diff(d) <= 0)
    return np.diag(d)


def generate(spec: GeneratorSpec):
    """Dispatch on spec.kind."""
    if spec.kind == "gaussian_rows":
        return gen_gaussian_lls(spec)
    if spec.kind == "svd_conditioned":
        return gen_conditioned_llq(spec)
    return gen_diag_sketch(spec)


# ---------------------------------------------------------------- serialization

def _encode_matrix(a):
    return {"rows": int(a.shape[0]), "cols": int(a.shape[1]), "data": a.ravel(order="C").tolist()}


def _decode_matrix(d):
    a = np.asarray(d["data"], dtype=float).reshape(int(d["rows"]), int(d["cols"]))
    return a


def problem_from_dict(d):
    kind = d.get("kind")
    if kind == "lls":
        return LLSProblem(
            J=_decode_matrix(d["J"]),
            b=np.asarray(d["b"], dtype=float),
            theta_star=np.asarray(d["theta_star"], dtype=float),
            generator=d.get("generator"),
        )
    if kind == "llq":
        return LLQProblem(
            J=_decode_matrix(d["J"]),
            H=_decode_matrix(d["H"]),
            q=np.asarray(d["q"], dtype=float),
            c=float(d.get("c", 0.0)),
            theta_star=np.asarray(d["theta_star"], dtype=float),
            generator=d.get("generator"),
        )
    raise ValueError(f"unknown problem kind {kind!r}")


def save_problem(problem, path):
    path = Path(path)
    with path.open("w") as fh:
        json.dump(problem.to_dict(), fh)
    return path


def load_problem(path):
    with Path(path).open() as fh:
        return problem_from_dict(json.load(fh))
