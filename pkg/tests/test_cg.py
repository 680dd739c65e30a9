import numpy as np
import pytest
import scipy.sparse as sp

from havens import (
    BadInput,
    InjectionSpec,
    NotSymmetric,
    Outcome,
    ParseError,
    PlacementStrategy,
    SchemeKind,
    SparseMatrix,
    Strategy,
    build_poisson,
    cg_solve,
    direct_solve,
    load_matrix,
)
from havens.campaign import random_rhs, run_campaign
from havens.cg import OBJECTS, place_objects


def write_mm(tmp_path, text, name="m.mtx"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestMatrices:
    def test_poisson_2(self):
        A = build_poisson(2).to_dense()
        assert A.shape == (4, 4)
        assert np.all(np.diag(A) == 4)
        expected = np.array([[4, -1, -1, 0], [-1, 4, 0, -1], [-1, 0, 4, -1], [0, -1, -1, 4]])
        assert np.array_equal(A, expected)

    @pytest.mark.parametrize("m", [2, 3, 7, 16])
    def test_poisson_symmetric(self, m):
        A = build_poisson(m)
        assert A.n == m * m
        assert A.is_symmetric()

    def test_poisson_rejects_tiny(self):
        with pytest.raises(BadInput):
            build_poisson(1)

    def test_load_symmetric(self, tmp_path):
        p = write_mm(tmp_path, "%%MatrixMarket matrix coordinate real symmetric\n% comment\n"
                               "3 3 4\n1 1 2.0\n2 1 -1.0\n2 2 2.0\n3 3 1.5\n")
        A = load_matrix(p)
        assert A.n == 3
        assert A.to_dense()[0, 1] == A.to_dense()[1, 0] == -1.0

    def test_load_general(self, tmp_path):
        p = write_mm(tmp_path, "%%MatrixMarket matrix coordinate real general\n"
                               "2 2 4\n1 1 2\n1 2 1\n2 1 1\n2 2 2\n")
        assert load_matrix(p).to_dense().tolist() == [[2, 1], [1, 2]]

    def test_unsymmetric_general(self, tmp_path):
        p = write_mm(tmp_path, "%%MatrixMarket matrix coordinate real general\n"
                               "2 2 3\n1 1 2\n1 2 1\n2 2 2\n")
        with pytest.raises(NotSymmetric):
            load_matrix(p)

    def test_upper_entry_in_symmetric_file(self, tmp_path):
        p = write_mm(tmp_path, "%%MatrixMarket matrix coordinate real symmetric\n"
                               "2 2 2\n1 1 2\n1 2 1\n")
        with pytest.raises(NotSymmetric):
            load_matrix(p)

    @pytest.mark.parametrize("text", [
        "%MatrixMarket matrix coordinate real symmetric\n1 1 1\n1 1 1\n",
        "%%MatrixMarket matrix array real general\n1 1\n1\n",
        "%%MatrixMarket matrix coordinate complex symmetric\n1 1 1\n1 1 1 0\n",
        "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1\n",
        "%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n3 1 1\n",
        "",
    ])
    def test_parse_errors(self, tmp_path, text):
        with pytest.raises(ParseError):
            load_matrix(write_mm(tmp_path, text))


class TestDirectSolve:
    def test_identity(self):
        A = SparseMatrix.from_scipy(sp.identity(5))
        b = np.arange(5.0)
        assert np.array_equal(direct_solve(A, b), b)

    def test_scaled_identity(self):
        A = SparseMatrix.from_scipy(2 * sp.identity(6))
        assert np.allclose(direct_solve(A, np.ones(6)), 0.5)

    def test_poisson_residual(self):
        A = build_poisson(8)
        b = random_rhs(A.n, 3)
        x = direct_solve(A, b)
        assert np.max(np.abs(A.to_scipy() @ x - b)) <= 1e-8 * np.max(np.abs(b))

    def test_sparse_path_agrees(self):
        A = build_poisson(65)
        b = random_rhs(A.n, 1)
        x = direct_solve(A, b)
        assert A.n > 4096
        assert np.max(np.abs(A.to_scipy() @ x - b)) <= 1e-8 * np.max(np.abs(b))

    def test_singular(self):
        A = SparseMatrix.from_scipy(sp.csr_matrix((3, 3)))
        with pytest.raises(BadInput):
            direct_solve(A, np.ones(3))


class TestPlacement:
    def test_group_havens(self):
        A = build_poisson(4)
        for kind in Strategy:
            layout = place_objects(A, np.ones(A.n), PlacementStrategy(kind))
            assert set(layout.handles) == set(OBJECTS)
            protected = {g for g, h in layout.havens.items() if h.index != 0}
            assert protected == set(kind.protected)
            assert len(layout.protected_havens) == len(kind.protected)

    def test_matrix_dominates_footprint(self):
        A = build_poisson(32)
        layout = place_objects(A, np.ones(A.n), PlacementStrategy(Strategy.ALL))
        words = layout.haven_words()
        assert words["A"] > 0.5 * sum(words.values())

    def test_monolithic_unit_span(self):
        A = build_poisson(40)
        layout = place_objects(A, np.ones(A.n), PlacementStrategy(Strategy.ALL, unit_span="object"))
        units = layout.store.protection(layout.havens["A"]).units
        assert len(units) == 3
        split = place_objects(A, np.ones(A.n), PlacementStrategy(Strategy.ALL))
        assert len(split.store.protection(split.havens["A"]).units) > 3


class TestSolve:
    def test_converges_within_n(self):
        A = build_poisson(10)
        run = cg_solve(A, random_rhs(A.n, 0))
        assert run.outcome is Outcome.CONVERGED_CORRECT
        assert run.iterations <= A.n

    @pytest.mark.parametrize("scheme", list(SchemeKind))
    def test_all_schemes_fault_free(self, scheme):
        A = build_poisson(8)
        b = random_rhs(A.n, 1)
        ref = cg_solve(A, b, Strategy.NONE, keep_solution=True)
        for kind in Strategy:
            run = cg_solve(A, b, PlacementStrategy(kind, scheme), keep_solution=True)
            assert run.outcome is Outcome.CONVERGED_CORRECT
            assert np.array_equal(run.x, ref.x)
            assert run.detected == 0

    def test_zero_rhs(self):
        A = build_poisson(4)
        run = cg_solve(A, np.zeros(A.n), keep_solution=True)
        assert run.outcome is Outcome.CONVERGED_CORRECT
        assert run.iterations == 0 and not run.x.any()

    def test_bad_rhs(self):
        with pytest.raises(BadInput):
            cg_solve(build_poisson(4), np.ones(3))

    def test_maxiter_is_divergence(self):
        A = build_poisson(8)
        run = cg_solve(A, random_rhs(A.n, 0), maxiter=3)
        assert run.outcome is Outcome.DIVERGED

    def test_faults_in_dynamic_state_are_corrected(self):
        A = build_poisson(8)
        spec = InjectionSpec(seed=4, target=("x", "p", "r"), rate=1000.0)
        run = cg_solve(A, random_rhs(A.n, 0), Strategy.DYNAMIC, injection=spec)
        assert run.flips > 0
        assert run.corrected > 0
        assert run.outcome is Outcome.CONVERGED_CORRECT

    def test_structure_fault_unprotected(self):
        A = build_poisson(8)
        spec = InjectionSpec(seed=0, target="A.indices", rate=2e5)
        run = cg_solve(A, random_rhs(A.n, 0), Strategy.NONE, injection=spec)
        assert run.outcome is not Outcome.CONVERGED_CORRECT

    def test_checksum_aborts(self):
        A = build_poisson(8)
        spec = InjectionSpec(seed=1, target="A", rate=5000.0)
        run = cg_solve(A, random_rhs(A.n, 0), PlacementStrategy(Strategy.OPERANDS, SchemeKind.CHECKSUM),
                       injection=spec)
        assert run.outcome is Outcome.ABORTED_UNCORRECTABLE

    def test_same_seed_same_run(self):
        A = build_poisson(8)
        spec = InjectionSpec(seed=12, rate=2000.0)
        b = random_rhs(A.n, 0)
        a = cg_solve(A, b, Strategy.STATIC, injection=spec, keep_solution=True)
        c = cg_solve(A, b, Strategy.STATIC, injection=spec, keep_solution=True)
        assert (a.outcome, a.iterations, a.flips, a.corrected) == (c.outcome, c.iterations, c.flips, c.corrected)
        assert np.array_equal(a.x, c.x)


def test_operand_faults_need_operand_protection():
    # heavy faults aimed at A: unprotected runs mostly fail, protected ones recover
    A = build_poisson(8)
    spec = InjectionSpec(seed=21, target="A", rate=200.0)
    res = run_campaign(A, ["none", "operands"], spec, trials=30, timing=False)
    none, ops = res["none"], res["operands"]
    bad = none.counts[Outcome.CONVERGED_WRONG] + none.counts[Outcome.DIVERGED]
    assert bad > none.counts[Outcome.CONVERGED_CORRECT]
    assert ops.completion_rate > none.completion_rate
    assert ops.corrected > 0
