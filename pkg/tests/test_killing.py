import numpy as np
import pytest

from kornlab.discretization import SurfaceGrid, ambient_to_frame
from kornlab.errors import PreconditionError, UnsupportedSurfaceError
from kornlab.geometry import (Hypersurface, ProfileExpr, ThicknessProfile,
                              constant_profile)
from kornlab.killing import (BochnerReport, KillingBasis, bochner_check,
                             intrinsic_killing_field, killing_basis,
                             restrict_profile, rigid_tangent_basis,
                             surface_forms)

CIRCLE = Hypersurface("circle", radius=1.0)
ELLIPSE = Hypersurface("ellipse", a=1.3, b=0.8)
TORUS = Hypersurface("torus", major_radius=2.0, minor_radius=1.0)
BUMPY = Hypersurface("bumpy-torus", major_radius=2.0, minor_radius=1.0,
                     bump_amplitude=0.15, bump_mode=3)
SPHERE = Hypersurface("sphere", radius=1.0)


def frame_coeffs_of(surface, resolution, ambient_fn):
    grid = SurfaceGrid(surface, np.atleast_1d(resolution))
    return grid, ambient_to_frame(grid, ambient_fn(grid))


class TestSurfaceForms:
    def test_unit_tangent_is_killing_on_circle(self):
        forms = surface_forms(CIRCLE, (64,))
        f = np.ones(64)  # unit-tangent frame coefficient
        assert f @ (forms.symgrad @ f) < 1e-10

    def test_torus_azimuthal_rotation_is_killing(self):
        forms = surface_forms(TORUS, (16, 32))
        grid = forms.grid
        f = ambient_to_frame(grid, intrinsic_killing_field(TORUS, grid.params))
        q = f @ (forms.symgrad @ f)
        k = f @ (forms.stiffness @ f)
        assert q < 1e-8 * k

    def test_modulated_tangent_not_killing(self):
        # (cos theta) * tangent has symmetric-gradient energy bounded away
        # from zero; the analytic tangential derivative of the coefficient
        # gives integral of sin^2 = pi
        vals = []
        for n in (64, 128):
            forms = surface_forms(CIRCLE, (n,))
            th = forms.grid.params[:, 0]
            f = np.cos(th)
            vals.append(f @ (forms.symgrad @ f))
        np.testing.assert_allclose(vals, np.pi, rtol=1e-8)

    def test_sphere_rejected(self):
        with pytest.raises(UnsupportedSurfaceError):
            surface_forms(SPHERE, (16, 32))


class TestKillingBasis:
    def test_circle_dimension_one_unit_tangent(self):
        basis = killing_basis(CIRCLE, (64,))
        assert basis.dim == 1
        v = basis.ambient(0)
        tang = np.stack([-np.sin(basis.grid.params[:, 0]),
                         np.cos(basis.grid.params[:, 0])], axis=-1)
        # member equals the normalized unit tangent up to sign
        norm = np.sqrt(2 * np.pi)
        agree = min(np.max(np.abs(v - tang / norm)),
                    np.max(np.abs(v + tang / norm)))
        assert agree < 1e-8

    def test_ellipse_dimension_one(self):
        basis = killing_basis(ELLIPSE, (64,))
        assert basis.dim == 1
        # constant-speed tangent: frame coefficient is constant
        coeff = basis.member(0)
        assert np.max(np.abs(coeff - coeff.mean())) < 1e-8 * abs(coeff.mean())

    def test_torus_dimension(self):
        basis = killing_basis(TORUS, (16, 32))
        assert basis.dim >= 1

    def test_bumpy_torus_dimension_zero(self):
        basis = killing_basis(BUMPY, (16, 32))
        assert basis.dim == 0

    def test_dimension_stable_under_refinement(self):
        for surface, res, expected in [
            (CIRCLE, (32,), 1), (CIRCLE, (64,), 1),
            (ELLIPSE, (32,), 1), (ELLIPSE, (64,), 1),
        ]:
            assert killing_basis(surface, res).dim == expected

    def test_members_orthonormal_and_tangent(self):
        basis = killing_basis(TORUS, (16, 32))
        grid = basis.grid
        k = grid.frames.shape[-1]
        w = np.repeat(grid.weights, k)
        gram = basis.coeffs.T @ (w[:, None] * basis.coeffs)
        np.testing.assert_allclose(gram, np.eye(basis.dim), atol=1e-10)
        for i in range(basis.dim):
            v = basis.ambient(i)
            assert np.max(np.abs(np.sum(v * grid.normals, axis=-1))) < 1e-10


class TestRigidTangentBasis:
    def test_circle_one_rotation(self):
        basis = rigid_tangent_basis(CIRCLE, (64,))
        assert basis.dim == 1

    def test_ellipse_none(self):
        basis = rigid_tangent_basis(ELLIPSE, (64,))
        assert basis.dim == 0

    def test_sphere_three_rotations(self):
        basis = rigid_tangent_basis(SPHERE, (24, 48))
        assert basis.dim == 3

    def test_torus_one(self):
        basis = rigid_tangent_basis(TORUS, (16, 32))
        assert basis.dim == 1

    def test_rigid_members_have_small_korn_energy(self):
        # R(S) is contained in I(S)
        for surface, res in [(CIRCLE, (64,)), (TORUS, (16, 32))]:
            forms = surface_forms(surface, res)
            basis = rigid_tangent_basis(surface, res)
            for i in range(basis.dim):
                f = basis.member(i)
                assert f @ (forms.symgrad @ f) < 1e-8


class TestRestrictProfile:
    def test_constant_profile_keeps_everything(self):
        basis = killing_basis(TORUS, (16, 32))
        out = restrict_profile(basis, constant_profile())
        assert out.dim == basis.dim

    def test_meridian_dependence_keeps_azimuthal_field(self):
        basis = killing_basis(TORUS, (16, 32))
        prof = ThicknessProfile(
            ProfileExpr(base=1.0),
            ProfileExpr(base=1.0, amp=0.3, mode=1, param_index=0))
        assert restrict_profile(basis, prof).dim == 1

    def test_azimuthal_dependence_rejects(self):
        basis = killing_basis(TORUS, (16, 32))
        prof = ThicknessProfile(
            ProfileExpr(base=1.0),
            ProfileExpr(base=1.0, amp=0.3, mode=1, param_index=1))
        assert restrict_profile(basis, prof).dim == 0
        # quadrature of |v . grad g|^2 is strictly positive for this pair
        grid = basis.grid
        grad = prof.surface_gradient(TORUS, grid.params, which=1)
        v = basis.ambient(0)
        pairing = np.sum(grid.weights * np.sum(v * grad, axis=-1)**2)
        assert pairing > 1e-3

    def test_idempotent(self):
        basis = killing_basis(TORUS, (16, 32))
        prof = ThicknessProfile(
            ProfileExpr(base=1.0),
            ProfileExpr(base=1.0, amp=0.3, mode=1, param_index=0))
        once = restrict_profile(basis, prof)
        twice = restrict_profile(once, prof)
        assert twice.dim == once.dim
        # spans agree: projection of each member onto the other basis is full
        grid = basis.grid
        k = grid.frames.shape[-1]
        w = np.repeat(grid.weights, k)
        overlap = once.coeffs.T @ (w[:, None] * twice.coeffs)
        s = np.linalg.svd(overlap, compute_uv=False)
        np.testing.assert_allclose(s, 1.0, atol=1e-10)


class TestBochner:
    def test_unit_circle(self):
        rep = bochner_check(CIRCLE, np.ones(128), (128,))
        assert abs(rep.lhs - 2 * np.pi) < 1e-10
        assert abs(rep.rhs - 2 * np.pi) < 1e-10
        assert rep.rel_error < 1e-10

    def test_unit_sphere_axial_rotation(self):
        A = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        rep = bochner_check(SPHERE, (A, np.zeros(3)), (64, 128))
        exact = 16 * np.pi / 3
        assert abs(rep.lhs - exact) < 1e-6 * exact
        assert abs(rep.rhs - exact) < 1e-6 * exact
        assert rep.rel_error < 1e-6
        # Gaussian-curvature variant: covariant energy = integral of |v|^2
        lhs_cov, rhs_cov, rel = rep.covariant
        assert abs(rhs_cov - 8 * np.pi / 3) < 1e-6 * 8 * np.pi / 3
        assert rel < 1e-6

    def test_torus_azimuthal_closed_form(self):
        # both sides equal 6 pi^2 R r for the axial rotation generator
        A = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        rep = bochner_check(TORUS, (A, np.zeros(3)), (128, 256))
        exact = 6 * np.pi**2 * 2.0 * 1.0
        assert abs(rep.lhs - exact) < 1e-6 * exact
        assert abs(rep.rhs - exact) < 1e-6 * exact
        assert rep.rel_error < 1e-6

    def test_grid_field_path_matches_rigid_path(self):
        grid = SurfaceGrid(TORUS, (32, 64))
        v = intrinsic_killing_field(TORUS, grid.params)
        rep = bochner_check(TORUS, v.reshape(-1), (32, 64))
        exact = 6 * np.pi**2 * 2.0
        assert rep.rel_error < 1e-6
        assert abs(rep.lhs - exact) < 1e-6 * exact

    def test_non_killing_rejected(self):
        th = np.arange(64) * 2 * np.pi / 64
        with pytest.raises(PreconditionError):
            bochner_check(CIRCLE, np.cos(th), (64,))

    def test_non_tangent_rigid_rejected(self):
        with pytest.raises(PreconditionError):
            bochner_check(SPHERE, (np.zeros((3, 3)), np.array([1.0, 0, 0])),
                          (24, 48))


class TestNormEquivalenceWitness:
    def test_gradient_to_mass_ratio_matches_curvature_quadrature(self):
        # for Killing fields the full-gradient energy equals the curvature
        # pairing, so the Rayleigh ratio agrees with its quadrature
        for surface, res in [(CIRCLE, (64,)), (ELLIPSE, (64,)),
                             (TORUS, (16, 32))]:
            basis = killing_basis(surface, res)
            forms = surface_forms(surface, res)
            for i in range(basis.dim):
                f = basis.member(i)
                lhs_ratio = (f @ (forms.stiffness @ f)) / (f @ (forms.mass @ f))
                rep = bochner_check(surface, f, res)
                rhs_ratio = rep.rhs / (f @ (forms.mass @ f))
                assert abs(lhs_ratio - rhs_ratio) < 1e-5 * abs(rhs_ratio)
