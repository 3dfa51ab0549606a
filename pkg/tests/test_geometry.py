import numpy as np
import pytest

from kornlab.errors import (ConfigurationError, ShellIntersectionError)
from kornlab.geometry import (Hypersurface, ProfileExpr, ShellDomain,
                              ThicknessProfile, constant_profile,
                              offset_boundary_normal, shape_operator,
                              shell_jacobian, surface_point, thickness_at,
                              unit_normal)

RNG_SEED = 20240811


def fd_normal_derivative(surface, params, j, step):
    """Independent oracle: central difference of the unit normal field."""
    shift = np.zeros(surface.n_params)
    shift[j] = step
    return (surface.unit_normal(params + shift)
            - surface.unit_normal(params - shift)) / (2 * step)


def fd_principal_curvatures(surface, params, step=1e-5):
    """Principal curvatures from differenced normals (never uses Pi)."""
    E, C = surface.frames(params)
    dn = np.stack([fd_normal_derivative(surface, params, j, step)
                   for j in range(surface.n_params)], axis=-1)
    dn_frame = np.einsum("...dj,...ja->...da", dn, C)
    II = np.einsum("...da,...db->...ab", E, dn_frame)
    II = 0.5 * (II + np.swapaxes(II, -1, -2))
    return np.linalg.eigvalsh(II)


def all_families():
    return [
        Hypersurface("circle", radius=1.0),
        Hypersurface("ellipse", a=1.3, b=0.8),
        Hypersurface("torus", major_radius=2.0, minor_radius=1.0),
        Hypersurface("bumpy-torus", major_radius=2.0, minor_radius=1.0,
                     bump_amplitude=0.15, bump_mode=3),
        Hypersurface("sphere", radius=1.0),
    ]


class TestParametrization:
    def test_circle_point(self):
        s = Hypersurface("circle", radius=1.0)
        np.testing.assert_allclose(surface_point(s, [0.0]), [1.0, 0.0],
                                   atol=1e-15)

    def test_torus_point(self):
        s = Hypersurface("torus", major_radius=2.0, minor_radius=1.0)
        np.testing.assert_allclose(surface_point(s, [0.0, 0.0]),
                                   [3.0, 0.0, 0.0], atol=1e-15)

    def test_ellipse_point(self):
        s = Hypersurface("ellipse", a=1.3, b=0.8)
        np.testing.assert_allclose(surface_point(s, [np.pi / 2]),
                                   [0.0, 0.8], atol=1e-15)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            Hypersurface("mobius")

    def test_periodicity(self):
        rng = np.random.default_rng(RNG_SEED)
        for s in all_families():
            if s.quadrature_only:
                continue
            params = rng.uniform(0, 2 * np.pi, size=(40, s.n_params))
            shifted = params + np.array(s.periods)
            np.testing.assert_allclose(s.point(shifted), s.point(params),
                                       atol=1e-12)
            np.testing.assert_allclose(s.unit_normal(shifted),
                                       s.unit_normal(params), atol=1e-12)


class TestNormals:
    def test_circle_normal(self):
        s = Hypersurface("circle", radius=1.0)
        np.testing.assert_allclose(unit_normal(s, [np.pi / 2]), [0.0, 1.0],
                                   atol=1e-15)

    def test_torus_outer_equator(self):
        s = Hypersurface("torus", major_radius=2.0, minor_radius=1.0)
        np.testing.assert_allclose(unit_normal(s, [0.0, 0.0]), [1.0, 0.0, 0.0],
                                   atol=1e-15)

    def test_ellipse_axis_point(self):
        s = Hypersurface("ellipse", a=1.3, b=0.8)
        np.testing.assert_allclose(unit_normal(s, [0.0]), [1.0, 0.0],
                                   atol=1e-15)

    def test_unit_length_everywhere(self):
        rng = np.random.default_rng(RNG_SEED)
        for s in all_families():
            params = rng.uniform(0.1, 2 * np.pi - 0.1, size=(200, s.n_params))
            norms = np.linalg.norm(s.unit_normal(params), axis=-1)
            np.testing.assert_allclose(norms, 1.0, atol=1e-13)

    def test_outward_orientation(self):
        # circle/ellipse/sphere: positive dot with the position ray;
        # torus family: positive dot with the ray from the tube center circle
        rng = np.random.default_rng(RNG_SEED)
        for s in all_families():
            params = rng.uniform(0, 2 * np.pi, size=(200, s.n_params))
            if s.kind == "sphere":
                params[:, 0] = rng.uniform(0.1, np.pi - 0.1, size=200)
            x = s.point(params)
            n = s.unit_normal(params)
            if s.kind in ("torus", "bumpy-torus"):
                psi = params[:, 1]
                center = np.stack([s.major_radius * np.cos(psi),
                                   s.major_radius * np.sin(psi),
                                   np.zeros_like(psi)], axis=-1)
                ray = x - center
            else:
                ray = x
            assert np.all(np.sum(n * ray, axis=-1) > 0)


class TestShapeOperator:
    def test_unit_circle_curvature(self):
        s = Hypersurface("circle", radius=1.0)
        for th in (0.0, 0.7, 2.1):
            II = s.second_fundamental([th])
            np.testing.assert_allclose(II, [[1.0]], atol=1e-12)

    def test_torus_outer_equator_curvatures(self):
        s = Hypersurface("torus", major_radius=2.0, minor_radius=1.0)
        kappa = fd_principal_curvatures(s, np.array([0.0, 0.0]))
        np.testing.assert_allclose(np.sort(kappa), [1.0 / 3.0, 1.0], rtol=1e-8)
        analytic = np.linalg.eigvalsh(s.second_fundamental([0.0, 0.0]))
        np.testing.assert_allclose(np.sort(analytic), [1.0 / 3.0, 1.0],
                                   rtol=1e-12)

    def test_ellipse_curvature(self):
        s = Hypersurface("ellipse", a=1.3, b=0.8)
        kappa_fd = fd_principal_curvatures(s, np.array([0.0]))
        np.testing.assert_allclose(kappa_fd, [1.3 / 0.8**2], rtol=1e-8)
        # closed-form cross-check kappa(theta) = a*b/(a^2 sin^2 + b^2 cos^2)^{3/2}
        rng = np.random.default_rng(RNG_SEED)
        th = rng.uniform(0, 2 * np.pi, size=25)
        II = s.second_fundamental(th[:, None])[:, 0, 0]
        expected = (1.3 * 0.8) / (1.3**2 * np.sin(th)**2
                                  + 0.8**2 * np.cos(th)**2)**1.5
        np.testing.assert_allclose(II, expected, rtol=1e-10)

    def test_symmetry_and_annihilation(self):
        rng = np.random.default_rng(RNG_SEED)
        for s in all_families():
            params = rng.uniform(0, 2 * np.pi, size=(1000, s.n_params))
            if s.kind == "sphere":
                params[:, 0] = rng.uniform(0.05, np.pi - 0.05, size=1000)
            Pi = s.shape_operator(params)
            n = s.unit_normal(params)
            asym = np.max(np.abs(Pi - np.swapaxes(Pi, -1, -2)))
            resid = np.max(np.abs(np.einsum("...de,...e->...d", Pi, n)))
            assert asym < 1e-10
            assert resid < 1e-10

    def test_fd_consistency_second_order(self):
        # differenced normals converge to the shape-operator action at
        # rate >= 2 as the step is halved
        rng = np.random.default_rng(RNG_SEED)
        for s in all_families():
            params = rng.uniform(0, 2 * np.pi, size=(30, s.n_params))
            if s.kind == "sphere":
                params[:, 0] = rng.uniform(0.3, np.pi - 0.3, size=30)
            T = s.tangents(params)
            Pi = s.shape_operator(params)
            errs = []
            for step in (2e-3, 1e-3):
                err = 0.0
                for j in range(s.n_params):
                    fd = fd_normal_derivative(s, params, j, step)
                    exact = np.einsum("...de,...e->...d", Pi, T[..., j])
                    err = max(err, np.max(np.abs(fd - exact)))
                errs.append(err)
            if errs[0] < 1e-11:  # exactly linear normal field (circle/sphere)
                continue
            rate = np.log2(errs[0] / errs[1])
            assert rate > 1.9


class TestShell:
    def test_circle_jacobian(self):
        shell = ShellDomain(Hypersurface("circle", radius=1.0),
                            constant_profile(), h=0.1)
        np.testing.assert_allclose(shell_jacobian(shell, [[0.3]], 0.1), [1.1],
                                   rtol=1e-13)
        np.testing.assert_allclose(shell_jacobian(shell, [[1.1]], 0.0), [1.0],
                                   rtol=1e-14)

    def test_torus_jacobian_outer_equator(self):
        shell = ShellDomain(Hypersurface("torus", major_radius=2.0,
                                         minor_radius=1.0),
                            constant_profile(), h=0.3)
        val = shell_jacobian(shell, [[0.0, 0.0]], 0.3)
        # product of offset factors from the differenced curvatures
        kappa = fd_principal_curvatures(
            Hypersurface("torus", major_radius=2.0, minor_radius=1.0),
            np.array([0.0, 0.0]))
        np.testing.assert_allclose(val, [np.prod(1.0 + 0.3 * kappa)], rtol=1e-8)
        np.testing.assert_allclose(val, [1.43], rtol=1e-12)

    def test_self_intersection_rejected(self):
        with pytest.raises(ShellIntersectionError):
            ShellDomain(Hypersurface("torus", major_radius=2.0,
                                     minor_radius=1.0),
                        constant_profile(), h=1.2)

    def test_jacobian_positive_on_acceptance_shells(self):
        rng = np.random.default_rng(RNG_SEED)
        cases = [
            (Hypersurface("circle", radius=1.0), constant_profile(), 0.2),
            (Hypersurface("ellipse", a=1.3, b=0.8), constant_profile(), 0.2),
            (Hypersurface("torus", major_radius=2.0, minor_radius=1.0),
             constant_profile(), 0.2),
        ]
        for surf, prof, h in cases:
            shell = ShellDomain(surf, prof, h)
            params = rng.uniform(0, 2 * np.pi, size=(100, surf.n_params))
            g1h, g2h = shell.thickness_at(params)
            for t in (-g1h, g2h, 0.5 * (g2h - g1h)):
                assert np.all(shell.jacobian(params, t) > 0)


class TestThickness:
    def test_constant(self):
        shell = ShellDomain(Hypersurface("circle", radius=1.0),
                            constant_profile(), h=0.1)
        g1h, g2h = thickness_at(shell, [[0.4]])
        np.testing.assert_allclose([g1h, g2h], [[0.1], [0.1]], rtol=1e-15)

    def test_cosine(self):
        surf = Hypersurface("ellipse", a=1.3, b=0.8)
        prof = ThicknessProfile(ProfileExpr(base=1.0),
                                ProfileExpr(base=1.0, amp=0.5, mode=1))
        shell = ShellDomain(surf, prof, h=0.1)
        _, g2h = thickness_at(shell, [[0.0]])
        np.testing.assert_allclose(g2h, [0.15], rtol=1e-14)

    def test_h1_preset(self):
        # g1^h = h, g2^h = h*(1+h)
        prof = constant_profile(regime="H1", h_correction=(0.0, 1.0))
        shell = ShellDomain(Hypersurface("circle", radius=1.0), prof, h=0.1)
        g1h, g2h = thickness_at(shell, [[0.0]])
        np.testing.assert_allclose(g1h, [0.1], rtol=1e-15)
        np.testing.assert_allclose(g2h, [0.1 * 1.1], rtol=1e-15)

    def test_h2_rejects_correction(self):
        with pytest.raises(ConfigurationError):
            constant_profile(regime="H2", h_correction=(0.0, 1.0))


class TestOffsetBoundaryNormal:
    def test_parallel_boundaries_on_circle(self):
        shell = ShellDomain(Hypersurface("circle", radius=1.0),
                            constant_profile(), h=0.05)
        params = np.linspace(0, 2 * np.pi, 9)[:-1][:, None]
        n = shell.surface.unit_normal(params)
        np.testing.assert_allclose(
            offset_boundary_normal(shell, params, "plus"), n, atol=1e-13)
        np.testing.assert_allclose(
            offset_boundary_normal(shell, params, "minus"), -n, atol=1e-13)

    def test_variable_thickness_first_order_shape(self):
        # n^h approaches unit(n - grad g2^h) at rate h^2 on the plus side
        surf = Hypersurface("ellipse", a=1.3, b=0.8)
        prof = ThicknessProfile(ProfileExpr(base=1.0),
                                ProfileExpr(base=1.0, amp=0.5, mode=1))
        params = np.linspace(0, 2 * np.pi, 64, endpoint=False)[:, None]
        n = surf.unit_normal(params)
        errs = []
        for h in (0.1, 0.05, 0.025):
            shell = ShellDomain(surf, prof, h)
            nh = offset_boundary_normal(shell, params, "plus")
            grad = prof.surface_gradient(surf, params, which=1, h=h)
            pred = n - grad
            pred = pred / np.linalg.norm(pred, axis=-1, keepdims=True)
            errs.append(np.max(np.linalg.norm(nh - pred, axis=-1)))
        c = [err / h**2 for err, h in zip(errs, (0.1, 0.05, 0.025))]
        assert max(c) < 4 * min(c) + 1e-12
        assert errs[2] < errs[1] < errs[0]
