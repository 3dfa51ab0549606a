import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from kornlab.discretization import (ConstraintSpec, assemble_forms,
                                    build_grid, fourier_diff_matrix)
from kornlab.errors import ConfigurationError, FormError, SweepError
from kornlab.geometry import (Hypersurface, ShellDomain, constant_profile)
from kornlab.spectra import (EigenResult, SweepCache, fit_loglog,
                             korn_constant, poincare_constant,
                             smallest_eigenpairs, sweep, trace_constant)

CIRCLE = Hypersurface("circle", radius=1.0)
ELLIPSE = Hypersurface("ellipse", a=1.3, b=0.8)


def circle_shell(h=0.2):
    return ShellDomain(CIRCLE, constant_profile(), h)


def ellipse_shell(h=0.2):
    return ShellDomain(ELLIPSE, constant_profile(), h)


class TestSmallestEigenpairs:
    def test_identical_forms_give_unit_eigenvalues(self):
        rng = np.random.default_rng(3)
        M = rng.normal(size=(40, 40))
        B = M @ M.T + 40 * np.eye(40)
        res = smallest_eigenpairs(B, B, k=5)
        np.testing.assert_allclose(res.eigenvalues, 1.0, atol=1e-12)

    def test_laplace_spectrum_on_circle(self):
        # pencil (second-difference form, mass) tends to the Laplace
        # eigenvalues on S^1; the first nonzero pair approaches 1
        # (odd sizes: at even n the differentiation matrix annihilates the
        # sawtooth mode and the raw pencil picks up a spurious kernel)
        vals = []
        for n in (33, 65):
            D = fourier_diff_matrix(n)
            w = 2 * np.pi / n
            A = w * D.T @ D
            B = w * np.eye(n)
            res = smallest_eigenpairs(A, B, k=3)
            vals.append(res.eigenvalues[1])
        np.testing.assert_allclose(vals, 1.0, atol=1e-8)

    def test_indefinite_b_rejected(self):
        A = np.eye(5)
        B = np.diag([1.0, 1.0, -1.0, 1.0, 1.0])
        with pytest.raises(FormError):
            smallest_eigenpairs(A, B, k=2)

    def test_rayleigh_consistency(self):
        rng = np.random.default_rng(8)
        M = rng.normal(size=(30, 30))
        A = M + M.T
        A = A @ A.T
        B = np.eye(30)
        res = smallest_eigenpairs(A, B, k=4)
        for lam, i in zip(res.eigenvalues, range(4)):
            v = res.vectors[:, i]
            rq = (v @ A @ v) / (v @ B @ v)
            assert abs(rq - lam) <= 1e-10 * max(abs(lam), 1e-30)


class TestKornConstant:
    def test_annulus_degenerate_without_orthogonality(self):
        res = korn_constant(circle_shell(), (48, 10),
                            ConstraintSpec(tangency="both"))
        assert res.degenerate
        assert res.constant == math.inf

    def test_annulus_finite_with_rigid_orthogonality(self):
        res = korn_constant(circle_shell(), (48, 10),
                            ConstraintSpec(tangency="both",
                                           orthogonality="rigid"))
        assert not res.degenerate
        assert math.isfinite(res.constant)

    def test_ellipse_blowup_vs_constrained(self):
        free = korn_constant(ellipse_shell(0.1), (64, 10),
                             ConstraintSpec(tangency="both"))
        constrained = korn_constant(ellipse_shell(0.1), (64, 10),
                                    ConstraintSpec(tangency="both",
                                                   orthogonality="killing"))
        assert math.isfinite(free.constant)
        assert constrained.constant < free.constant
        assert constrained.meta["killing_basis_dim"] == 1
        # adding constraints never decreases the smallest eigenvalue
        assert constrained.eigenvalues[0] >= free.eigenvalues[0] - 1e-12

    def test_korn_quotient_scale_invariant(self):
        grid = build_grid(ellipse_shell(0.1), (32, 9))
        forms = assemble_forms(grid)
        rng = np.random.default_rng(5)
        u = rng.normal(size=grid.n_nodes * 2)
        q = lambda x: np.sqrt((x @ (forms.mass @ x) + x @ (forms.stiffness @ x))
                              / (x @ (forms.symgrad @ x)))
        np.testing.assert_allclose(q(u), q(17.3 * u), rtol=1e-12)


class TestPoincare:
    def test_constant_mode_deflated(self):
        res = poincare_constant(circle_shell(), (48, 10))
        assert abs(res.eigenvalues[0]) < 1e-12
        assert math.isfinite(res.constant)

    def test_matches_dense_qz_oracle(self):
        # independent full-spectrum solve of the same pencil through the
        # non-symmetric QZ path
        from kornlab.discretization import dealias_penalty_scalar

        shell = circle_shell(0.2)
        res = poincare_constant(shell, (32, 9))
        grid = build_grid(shell, (32, 9))
        forms = assemble_forms(grid)
        K = (forms.stiffness_scalar
             + dealias_penalty_scalar(grid, forms)).toarray()
        M = forms.mass_scalar.toarray()
        evals = scipy.linalg.eig(K, M, right=False)
        evals = np.sort(np.real(evals))
        oracle = evals[1] ** -0.5
        assert abs(res.constant - oracle) < 1e-8 * oracle


class TestTrace:
    def test_interior_bump_has_no_trace_energy(self):
        grid = build_grid(circle_shell(), (32, 12))
        forms = assemble_forms(grid)
        s = grid.s
        bump = np.exp(-1.0 / np.maximum(1e-9, 0.25 - (s - 0.5) ** 2))
        bump[np.abs(s - 0.5) >= 0.5] = 0.0
        vals = np.broadcast_to(bump[None, :], (grid.n_surf, grid.nt))
        u = vals.reshape(-1)
        T = forms.trace_plus_scalar + forms.trace_minus_scalar
        assert u @ (T @ u) < 1e-12

    def test_matches_dense_qz_oracle(self):
        shell = circle_shell(0.2)
        res = trace_constant(shell, (32, 9))
        grid = build_grid(shell, (32, 9))
        forms = assemble_forms(grid)
        T = (forms.trace_plus_scalar + forms.trace_minus_scalar).toarray()
        B = (forms.mass_scalar / 0.2 + 0.2 * forms.stiffness_scalar).toarray()
        evals = np.real(scipy.linalg.eig(T, B, right=False))
        oracle = np.sqrt(np.max(evals))
        assert abs(res.constant - oracle) < 1e-8 * oracle


class TestSweep:
    def test_synthetic_power_law(self):
        report = sweep(lambda h: {"value": 7.0 * h ** 2},
                       [0.4, 0.2, 0.1, 0.05])
        assert abs(report.slope - 2.0) < 1e-10
        assert report.reliable

    def test_too_few_rows_for_fit(self):
        with pytest.raises(ConfigurationError):
            fit_loglog([0.1, 0.2], [1.0, 2.0])

    def test_failure_preserves_partial_rows(self):
        def run(h):
            if h < 0.1:
                raise ValueError("boom")
            return {"value": h}
        with pytest.raises(SweepError) as err:
            sweep(run, [0.4, 0.2, 0.05])
        assert [r["h"] for r in err.value.partial_rows] == [0.4, 0.2]

    def test_cache_roundtrip(self, tmp_path):
        calls = []

        def run(h):
            calls.append(h)
            return {"value": 3.0 * h}

        cache = SweepCache(tmp_path, "deadbeef")
        r1 = sweep(run, [0.4, 0.2, 0.1], cache=cache)
        r2 = sweep(run, [0.4, 0.2, 0.1], cache=cache)
        assert len(calls) == 3
        assert r1.as_dict()["rows"] == r2.as_dict()["rows"]

    def test_unreliable_fit_flagged(self):
        vals = {0.4: 1.0, 0.2: 5.0, 0.1: 1.3}
        report = sweep(lambda h: {"value": vals[h]}, [0.4, 0.2, 0.1])
        assert not report.reliable
