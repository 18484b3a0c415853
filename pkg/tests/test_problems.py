"""Instance containers, generators, and (de)serialization."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sngdlab.problems import (GeneratorSpec, LLQProblem, LLSProblem,
                              gen_conditioned_llq, gen_diag_sketch,
                              gen_gaussian_lls, generate, load_problem,
                              problem_from_dict, save_problem)

TH = np.array([0.7, -0.3])
J3 = np.array([[2.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def lls3():
    return LLSProblem(J=J3, b=J3 @ TH, theta_star=TH)


def llq3():
    # H = diag(2,2,1) maps range(J) = span{(2,1,0),(0,0,1)} into itself
    H = np.diag([2.0, 2.0, 1.0])
    return LLQProblem(J=J3, H=H, q=-H @ J3 @ TH, c=0.0, theta_star=TH)


class TestContainers:
    def test_lls_shapes_and_kind(self):
        p = lls3()
        assert (p.m, p.n) == (3, 2)
        assert p.kind == "lls"
        p.validate()

    def test_llq_strong_consistency_validates(self):
        p = llq3()
        assert p.kind == "llq"
        p.validate()

    def test_wide_matrix_rejected(self):
        with pytest.raises(ValueError, match="m >= n"):
            LLSProblem(J=np.ones((2, 3)), b=np.ones(2), theta_star=np.ones(3))

    def test_rank_deficient_rejected_by_validate(self):
        J = np.array([[1.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        p = LLSProblem(J=J, b=J @ TH, theta_star=TH)
        with pytest.raises(ValueError, match="rank deficient"):
            p.validate()

    def test_inconsistent_rejected_by_validate(self):
        p = LLSProblem(J=J3, b=J3 @ TH + np.array([0.0, 0.0, 0.1]), theta_star=TH)
        with pytest.raises(ValueError, match="inconsistent"):
            p.validate()

    def test_llq_indefinite_h_rejected(self):
        H = np.diag([2.0, 2.0, -1.0])
        p = LLQProblem(J=J3, H=H, q=-H @ J3 @ TH, c=0.0, theta_star=TH)
        with pytest.raises(ValueError, match="positive definite"):
            p.validate()

    def test_llq_weak_consistency_rejected(self):
        # q not aligned with -H J theta_star breaks the stationarity identity
        H = np.diag([2.0, 2.0, 1.0])
        p = LLQProblem(J=J3, H=H, q=np.array([1.0, 0.0, 0.0]), c=0.0,
                       theta_star=TH)
        with pytest.raises(ValueError):
            p.validate()


class TestGeneratorSpec:
    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown generator kind"):
            GeneratorSpec(kind="nope", m=4, n=2)

    def test_wide_rejected(self):
        with pytest.raises(ValueError, match="m >= n"):
            GeneratorSpec(kind="gaussian_rows", m=2, n=4)

    def test_zero_decay_allowed(self):
        GeneratorSpec(kind="gaussian_rows", m=4, n=2, decay_exponent=0.0)

    def test_negative_decay_rejected(self):
        with pytest.raises(ValueError, match="decay_exponent"):
            GeneratorSpec(kind="gaussian_rows", m=4, n=2, decay_exponent=-1.0)

    def test_kappa_below_one_rejected(self):
        with pytest.raises(ValueError, match="condition-number"):
            GeneratorSpec(kind="svd_conditioned", m=4, n=2, kappa_J=0.5)

    def test_round_trip(self):
        gs = GeneratorSpec(kind="svd_conditioned", m=6, n=3, kappa_J=10.0,
                           kappa_H=2.0, seed=11)
        assert GeneratorSpec.from_dict(gs.to_dict()) == gs


class TestGenerators:
    def test_gaussian_lls_is_consistent(self):
        gs = GeneratorSpec(kind="gaussian_rows", m=30, n=4, decay_exponent=1.0,
                           seed=3)
        p = gen_gaussian_lls(gs)
        p.validate()
        assert (p.m, p.n) == (30, 4)

    def test_gaussian_lls_deterministic(self):
        gs = GeneratorSpec(kind="gaussian_rows", m=10, n=3, seed=5)
        a, b = gen_gaussian_lls(gs), gen_gaussian_lls(gs)
        assert np.array_equal(a.J, b.J) and np.array_equal(a.b, b.b)

    def test_conditioned_llq_hits_kappa(self):
        gs = GeneratorSpec(kind="svd_conditioned", m=40, n=6, kappa_J=25.0,
                           kappa_H=4.0, seed=1)
        p = gen_conditioned_llq(gs)
        p.validate()
        sv = np.linalg.svd(p.J, compute_uv=False)
        assert sv[0] / sv[-1] == pytest.approx(25.0, rel=1e-10)

    def test_conditioned_llq_strongly_consistent(self):
        gs = GeneratorSpec(kind="svd_conditioned", m=12, n=4, kappa_J=7.0,
                           kappa_H=3.0, seed=9)
        p = gen_conditioned_llq(gs)
        # range(HJ) subset of range(J): projecting HJ onto range(J) is lossless
        Q, _ = np.linalg.qr(p.J)
        HJ = p.H @ p.J
        assert np.linalg.norm(HJ - Q @ (Q.T @ HJ)) <= 1e-10 * np.linalg.norm(HJ)

    def test_diag_sketch_geometric_law(self):
        # kappa_J = 4 with n = 3 spans [1, 4] geometrically: diag(4, 2, 1)
        gs = GeneratorSpec(kind="diag_for_sketch", m=3, n=3, kappa_J=4.0)
        D = gen_diag_sketch(gs)
        assert np.allclose(np.diag(D), [4.0, 2.0, 1.0], atol=1e-12)

    def test_diag_sketch_polynomial_law(self):
        gs = GeneratorSpec(kind="diag_for_sketch", m=4, n=4, decay_exponent=1.0)
        D = gen_diag_sketch(gs)
        assert np.allclose(np.diag(D), [1.0, 0.5, 1 / 3, 0.25], atol=1e-12)

    def test_generate_dispatch(self):
        assert generate(GeneratorSpec(kind="gaussian_rows", m=6, n=2)).kind == "lls"
        assert generate(GeneratorSpec(kind="svd_conditioned", m=6, n=2)).kind == "llq"

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_gaussian_lls_always_validates(self, seed):
        gs = GeneratorSpec(kind="gaussian_rows", m=12, n=3, seed=seed)
        gen_gaussian_lls(gs).validate()

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_conditioned_llq_always_validates(self, seed):
        gs = GeneratorSpec(kind="svd_conditioned", m=8, n=3, kappa_J=30.0,
                           kappa_H=10.0, seed=seed)
        gen_conditioned_llq(gs).validate()


class TestSerialization:
    def test_lls_round_trip_exact(self, tmp_path):
        p = lls3()
        path = tmp_path / "p.json"
        save_problem(p, path)
        q = load_problem(path)
        assert q.kind == "lls"
        assert np.array_equal(q.J, p.J)
        assert np.array_equal(q.b, p.b)
        assert np.array_equal(q.theta_star, p.theta_star)

    def test_llq_round_trip_exact(self, tmp_path):
        p = llq3()
        path = tmp_path / "p.json"
        save_problem(p, path)
        q = load_problem(path)
        assert q.kind == "llq"
        assert np.array_equal(q.H, p.H)
        assert np.array_equal(q.q, p.q)
        assert q.c == p.c

    def test_generated_round_trip_exact(self, tmp_path):
        gs = GeneratorSpec(kind="svd_conditioned", m=9, n=3, kappa_J=5.0,
                           kappa_H=2.0, seed=4)
        p = gen_conditioned_llq(gs)
        path = tmp_path / "p.json"
        save_problem(p, path)
        q = load_problem(path)
        assert np.array_equal(q.J, p.J) and np.array_equal(q.H, p.H)

    def test_problem_from_dict_rejects_junk(self):
        with pytest.raises((ValueError, KeyError)):
            problem_from_dict({"kind": "parabola"})

    def test_file_is_plain_json(self, tmp_path):
        path = tmp_path / "p.json"
        save_problem(lls3(), path)
        d = json.loads(path.read_text())
        assert d["kind"] == "lls"
