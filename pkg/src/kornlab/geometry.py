"""Closed parametrized hypersurfaces, thickness profiles, and the shell map.

Surfaces are closed-form parametrizations over periodic parameters:

* ``circle``       radius ``a``, ambient dimension 2, parameter ``theta``
* ``ellipse``      semi-axes ``a``, ``b``, ambient dimension 2
* ``torus``        major/minor radii, parameters ``(phi, psi)`` where ``phi``
                   runs around the tube (meridian) and ``psi`` around the
                   symmetry axis (azimuth)
* ``bumpy-torus``  torus with minor radius ``r*(1 + eps*cos(m*psi))``; the
                   azimuthal modulation removes all rotational symmetry
* ``sphere``       radius ``a``; quadrature-only (no periodic chart), used
                   for surface integrals but never for shell grids

Normals are outward.  The shape operator is the tangential gradient of the
outward unit normal, returned as an ambient symmetric matrix annihilating
the normal; with this convention the unit circle has curvature +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GeometryError, ShellIntersectionError

_FD_STEP = 1e-3  # step for 4th-order differencing of the bumpy-torus normal


def _normalize(v, axis=-1):
    norms = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norms < 1e-14):
        raise GeometryError("degenerate vector during normalization")
    return v / norms


class Hypersurface:
    """A closed hypersurface given by an analytic periodic parametrization."""

    KINDS = ("circle", "ellipse", "torus", "bumpy-torus", "sphere")

    def __init__(self, kind, **params):
        if kind not in self.KINDS:
            raise ConfigurationError(f"unknown surface kind: {kind!r}")
        self.kind = kind
        self.params = dict(params)
        if kind == "circle":
            self.radius = float(params.pop("radius", 1.0))
            self.ambient_dim, self.n_params = 2, 1
        elif kind == "ellipse":
            self.a = float(params.pop("a"))
            self.b = float(params.pop("b"))
            self.ambient_dim, self.n_params = 2, 1
        elif kind in ("torus", "bumpy-torus"):
            self.major_radius = float(params.pop("major_radius"))
            self.minor_radius = float(params.pop("minor_radius"))
            if kind == "bumpy-torus":
                self.bump_amplitude = float(params.pop("bump_amplitude", 0.15))
                self.bump_mode = int(params.pop("bump_mode", 3))
            self.ambient_dim, self.n_params = 3, 2
        elif kind == "sphere":
            self.radius = float(params.pop("radius", 1.0))
            self.ambient_dim, self.n_params = 3, 2
        if params:
            raise ConfigurationError(
                f"unknown parameters for surface kind {kind!r}: {sorted(params)}")
        self._validate_shape_params()

    def _validate_shape_params(self):
        if self.kind == "circle" and self.radius <= 0:
            raise ConfigurationError("circle radius must be positive")
        if self.kind == "ellipse" and (self.a <= 0 or self.b <= 0):
            raise ConfigurationError("ellipse semi-axes must be positive")
        if self.kind in ("torus", "bumpy-torus"):
            if not 0 < self.minor_radius < self.major_radius:
                raise ConfigurationError(
                    "torus requires 0 < minor_radius < major_radius")
            if self.kind == "bumpy-torus" and not 0 <= self.bump_amplitude < 1:
                raise ConfigurationError("bump amplitude must lie in [0, 1)")
        if self.kind == "sphere" and self.radius <= 0:
            raise ConfigurationError("sphere radius must be positive")

    # ------------------------------------------------------------------
    # parametrization
    # ------------------------------------------------------------------

    @property
    def quadrature_only(self):
        return self.kind == "sphere"

    @property
    def periods(self):
        """Period of each parameter (the sphere's polar angle has none)."""
        if self.kind == "sphere":
            return (np.pi, 2 * np.pi)
        return (2 * np.pi,) * self.n_params

    def _split(self, params):
        params = np.asarray(params, dtype=float)
        if params.shape[-1] != self.n_params:
            raise GeometryError(
                f"expected {self.n_params} parameters, got shape {params.shape}")
        return tuple(params[..., j] for j in range(self.n_params))

    def point(self, params):
        """Ambient point of the parametrization, shape (..., ambient_dim)."""
        if self.kind == "circle":
            (th,) = self._split(params)
            return self.radius * np.stack([np.cos(th), np.sin(th)], axis=-1)
        if self.kind == "ellipse":
            (th,) = self._split(params)
            return np.stack([self.a * np.cos(th), self.b * np.sin(th)], axis=-1)
        if self.kind == "torus":
            ph, ps = self._split(params)
            rho = self.major_radius + self.minor_radius * np.cos(ph)
            return np.stack(
                [rho * np.cos(ps), rho * np.sin(ps),
                 self.minor_radius * np.sin(ph)], axis=-1)
        if self.kind == "bumpy-torus":
            ph, ps = self._split(params)
            r = self._bumpy_minor(ps)
            rho = self.major_radius + r * np.cos(ph)
            return np.stack(
                [rho * np.cos(ps), rho * np.sin(ps), r * np.sin(ph)], axis=-1)
        # sphere: params are (polar, azimuth)
        th, ph = self._split(params)
        return self.radius * np.stack(
            [np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)],
            axis=-1)

    def _bumpy_minor(self, ps):
        return self.minor_radius * (
            1.0 + self.bump_amplitude * np.cos(self.bump_mode * ps))

    def _bumpy_minor_d(self, ps):
        return -self.minor_radius * self.bump_amplitude * self.bump_mode * \
            np.sin(self.bump_mode * ps)

    def tangents(self, params):
        """Chart tangent vectors d(point)/d(param_j), shape (..., dim, n_params)."""
        if self.kind == "circle":
            (th,) = self._split(params)
            t = self.radius * np.stack([-np.sin(th), np.cos(th)], axis=-1)
            return t[..., None]
        if self.kind == "ellipse":
            (th,) = self._split(params)
            t = np.stack([-self.a * np.sin(th), self.b * np.cos(th)], axis=-1)
            return t[..., None]
        if self.kind == "torus":
            ph, ps = self._split(params)
            r, R = self.minor_radius, self.major_radius
            rho = R + r * np.cos(ph)
            t_ph = np.stack([-r * np.sin(ph) * np.cos(ps),
                             -r * np.sin(ph) * np.sin(ps),
                             r * np.cos(ph)], axis=-1)
            t_ps = np.stack([-rho * np.sin(ps), rho * np.cos(ps),
                             np.zeros_like(ps)], axis=-1)
            return np.stack([t_ph, t_ps], axis=-1)
        if self.kind == "bumpy-torus":
            ph, ps = self._split(params)
            r = self._bumpy_minor(ps)
            dr = self._bumpy_minor_d(ps)
            rho = self.major_radius + r * np.cos(ph)
            t_ph = np.stack([-r * np.sin(ph) * np.cos(ps),
                             -r * np.sin(ph) * np.sin(ps),
                             r * np.cos(ph)], axis=-1)
            t_ps = np.stack(
                [dr * np.cos(ph) * np.cos(ps) - rho * np.sin(ps),
                 dr * np.cos(ph) * np.sin(ps) + rho * np.cos(ps),
                 dr * np.sin(ph)], axis=-1)
            return np.stack([t_ph, t_ps], axis=-1)
        th, ph = self._split(params)
        a = self.radius
        t_th = a * np.stack([np.cos(th) * np.cos(ph),
                             np.cos(th) * np.sin(ph), -np.sin(th)], axis=-1)
        t_ph = a * np.stack([-np.sin(th) * np.sin(ph),
                             np.sin(th) * np.cos(ph),
                             np.zeros_like(th)], axis=-1)
        return np.stack([t_th, t_ph], axis=-1)

    def unit_normal(self, params):
        """Outward unit normal, shape (..., ambient_dim)."""
        if self.kind == "circle":
            (th,) = self._split(params)
            return np.stack([np.cos(th), np.sin(th)], axis=-1)
        if self.kind == "ellipse":
            (th,) = self._split(params)
            w = np.stack([self.b * np.cos(th), self.a * np.sin(th)], axis=-1)
            return _normalize(w)
        if self.kind == "torus":
            ph, ps = self._split(params)
            return np.stack([np.cos(ph) * np.cos(ps),
                             np.cos(ph) * np.sin(ps), np.sin(ph)], axis=-1)
        if self.kind == "bumpy-torus":
            t = self.tangents(params)
            return _normalize(np.cross(t[..., 1], t[..., 0]))
        th, ph = self._split(params)
        return np.stack([np.sin(th) * np.cos(ph),
                         np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)

    def normal_derivatives(self, params):
        """Parametric derivatives of the unit normal, shape (..., dim, n_params).

        Analytic for circle/ellipse/torus/sphere; 4th-order central
        differencing of the analytic normal for the bumpy torus.
        """
        if self.kind == "circle":
            (th,) = self._split(params)
            d = np.stack([-np.sin(th), np.cos(th)], axis=-1)
            return d[..., None]
        if self.kind == "ellipse":
            (th,) = self._split(params)
            w = np.stack([self.b * np.cos(th), self.a * np.sin(th)], axis=-1)
            dw = np.stack([-self.b * np.sin(th), self.a * np.cos(th)], axis=-1)
            nw = np.linalg.norm(w, axis=-1, keepdims=True)
            proj = np.sum(w * dw, axis=-1, keepdims=True)
            d = dw / nw - w * proj / nw**3
            return d[..., None]
        if self.kind == "torus":
            ph, ps = self._split(params)
            d_ph = np.stack([-np.sin(ph) * np.cos(ps),
                             -np.sin(ph) * np.sin(ps), np.cos(ph)], axis=-1)
            d_ps = np.stack([-np.cos(ph) * np.sin(ps),
                             np.cos(ph) * np.cos(ps),
                             np.zeros_like(ph)], axis=-1)
            return np.stack([d_ph, d_ps], axis=-1)
        if self.kind == "bumpy-torus":
            return self._fd_normal_derivatives(params)
        th, ph = self._split(params)
        a = self.radius
        t = self.tangents(params)
        return t / a

    def _fd_normal_derivatives(self, params):
        params = np.asarray(params, dtype=float)
        out = np.empty(params.shape[:-1] + (self.ambient_dim, self.n_params))
        h = _FD_STEP
        for j in range(self.n_params):
            shift = np.zeros(self.n_params)
            shift[j] = 1.0
            n_p1 = self.unit_normal(params + h * shift)
            n_m1 = self.unit_normal(params - h * shift)
            n_p2 = self.unit_normal(params + 2 * h * shift)
            n_m2 = self.unit_normal(params - 2 * h * shift)
            out[..., j] = (8 * (n_p1 - n_m1) - (n_p2 - n_m2)) / (12 * h)
        return out

    def frames(self, params):
        """Orthonormal tangent frames by Gram-Schmidt in parameter order.

        Returns ``(E, C)`` where ``E`` has shape (..., dim, n_params) with
        orthonormal columns and ``C`` (..., n_params, n_params) satisfies
        ``E = tangents @ C``; thus a derivative along frame direction ``a``
        is ``sum_j C[j, a] * d/d(param_j)``.
        """
        T = self.tangents(params)
        t1 = T[..., 0]
        r11 = np.linalg.norm(t1, axis=-1)
        if np.any(r11 < 1e-13):
            raise GeometryError("degenerate tangent basis (first direction)")
        e1 = t1 / r11[..., None]
        if self.n_params == 1:
            E = e1[..., None]
            C = (1.0 / r11)[..., None, None]
            return E, C
        t2 = T[..., 1]
        r12 = np.sum(e1 * t2, axis=-1)
        v = t2 - r12[..., None] * e1
        r22 = np.linalg.norm(v, axis=-1)
        if np.any(r22 < 1e-13):
            raise GeometryError("degenerate tangent basis (second direction)")
        e2 = v / r22[..., None]
        E = np.stack([e1, e2], axis=-1)
        C = np.zeros(np.shape(r11) + (2, 2))
        C[..., 0, 0] = 1.0 / r11
        C[..., 0, 1] = -r12 / (r11 * r22)
        C[..., 1, 1] = 1.0 / r22
        return E, C

    def second_fundamental(self, params):
        """Second fundamental form in the orthonormal frame, shape (..., k, k).

        Entries e_a . (dn along e_b); symmetrized, so its eigenvalues are
        the principal curvatures.
        """
        E, C = self.frames(params)
        dn = self.normal_derivatives(params)
        dn_frame = np.einsum("...dj,...ja->...da", dn, C)
        II = np.einsum("...da,...db->...ab", E, dn_frame)
        return 0.5 * (II + np.swapaxes(II, -1, -2))

    def shape_operator(self, params):
        """Ambient shape-operator matrix: symmetric, annihilates the normal."""
        E, _ = self.frames(params)
        II = self.second_fundamental(params)
        return np.einsum("...da,...ab,...eb->...de", E, II, E)

    def area_element(self, params):
        """Surface measure density w.r.t. the parameters."""
        T = self.tangents(params)
        if self.n_params == 1:
            return np.linalg.norm(T[..., 0], axis=-1)
        return np.linalg.norm(np.cross(T[..., 0], T[..., 1]), axis=-1)

    def validation_params(self, m=48):
        """Deterministic parameter sample avoiding symmetry-special points."""
        offset = 0.381966  # golden-ratio fraction
        axes = []
        for period in self.periods:
            axes.append((np.arange(m) + offset) * period / m)
        if self.n_params == 1:
            return axes[0][:, None]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack([a.ravel() for a in g], axis=-1)


# ----------------------------------------------------------------------
# thickness profiles
# ----------------------------------------------------------------------

_PARAM_NAMES = {
    "circle": {"theta": 0},
    "ellipse": {"theta": 0},
    "torus": {"phi": 0, "psi": 1},
    "bumpy-torus": {"phi": 0, "psi": 1},
}


@dataclass(frozen=True)
class ProfileExpr:
    """Closed-form thickness expression: base + amp * cos(mode * param)."""

    base: float
    amp: float = 0.0
    mode: int = 0
    param_index: int = 0

    def value(self, params):
        params = np.asarray(params, dtype=float)
        u = params[..., self.param_index]
        return self.base + self.amp * np.cos(self.mode * u)

    def param_derivative(self, params, j):
        params = np.asarray(params, dtype=float)
        u = params[..., self.param_index]
        if j != self.param_index or self.amp == 0.0:
            return np.zeros_like(u)
        return -self.amp * self.mode * np.sin(self.mode * u)

    @staticmethod
    def from_config(tag, surface):
        if not isinstance(tag, dict) or len(tag) != 1:
            raise ConfigurationError(f"bad thickness expression: {tag!r}")
        if "const" in tag:
            return ProfileExpr(base=float(tag["const"]))
        if "cos" in tag:
            spec = dict(tag["cos"])
            try:
                names = _PARAM_NAMES[surface.kind]
            except KeyError:
                raise ConfigurationError(
                    f"thickness profiles unsupported on {surface.kind!r}") from None
            pname = spec.pop("param")
            if pname not in names:
                raise ConfigurationError(
                    f"unknown profile parameter {pname!r} for {surface.kind}")
            return ProfileExpr(base=float(spec.pop("base")),
                               amp=float(spec.pop("amp")),
                               mode=int(spec.pop("mode", 1)),
                               param_index=names[pname])
        raise ConfigurationError(f"unknown thickness expression tag: {tag!r}")


@dataclass
class ThicknessProfile:
    """Thickness pair (g1, g2) with its scaling regime.

    In regime ``H2`` the half-thicknesses scale exactly as ``g_i^h = h*g_i``.
    Regime ``H1`` allows the non-proportional preset
    ``g_i^h = h * g_i * (1 + corr_i * h)`` via ``h_correction``; the pinched
    bounds C1*h <= g_i^h <= C2*h still hold for small h.
    """

    g1: ProfileExpr
    g2: ProfileExpr
    regime: str = "H2"
    h_correction: tuple = (0.0, 0.0)
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.regime not in ("H1", "H2"):
            raise ConfigurationError(f"unknown regime: {self.regime!r}")
        if self.regime == "H2" and any(c != 0.0 for c in self.h_correction):
            raise ConfigurationError("h_correction requires regime H1")

    def validate(self, surface, m=48):
        """Check positivity on a validation grid and record the bounds."""
        params = surface.validation_params(m)
        g1 = self.g1.value(params)
        g2 = self.g2.value(params)
        if np.min(g1) <= 0 or np.min(g2) <= 0:
            raise ConfigurationError("thickness profile must be positive")
        grad1 = self.surface_gradient(surface, params, which=0)
        grad2 = self.surface_gradient(surface, params, which=1)
        self.bounds = {
            "C1": float(min(np.min(g1), np.min(g2))),
            "C2": float(max(np.max(g1), np.max(g2))),
            "C3": float(max(np.max(np.linalg.norm(grad1, axis=-1)),
                            np.max(np.linalg.norm(grad2, axis=-1)))) + 1.0,
        }
        return self.bounds

    def _expr(self, which):
        return (self.g1, self.g2)[which]

    def values(self, params):
        return self.g1.value(params), self.g2.value(params)

    def h_values(self, params, h):
        """The half-thickness pair (g1^h, g2^h) at thickness scale h."""
        c1, c2 = self.h_correction
        return (h * (1.0 + c1 * h) * self.g1.value(params),
                h * (1.0 + c2 * h) * self.g2.value(params))

    def h_scale(self, h):
        c1, c2 = self.h_correction
        return h * (1.0 + c1 * h), h * (1.0 + c2 * h)

    def param_derivatives(self, params, which):
        """Parametric derivatives of g_i, shape (..., n_params_of_expr)."""
        expr = self._expr(which)
        return [expr.param_derivative(params, j) for j in range(2)]

    def surface_gradient(self, surface, params, which, h=None):
        """Ambient (tangent) surface gradient of g_i, or of g_i^h when h given."""
        expr = self._expr(which)
        E, C = surface.frames(params)
        k = surface.n_params
        dg = np.stack([expr.param_derivative(params, j) for j in range(k)],
                      axis=-1)
        frame_dirs = np.einsum("...j,...ja->...a", dg, C)
        grad = np.einsum("...a,...da->...d", frame_dirs, E)
        if h is None:
            return grad
        scale = self.h_scale(h)[which] / h
        return h * scale * grad


def constant_profile(c1=1.0, c2=None, regime="H2", h_correction=(0.0, 0.0)):
    if c2 is None:
        c2 = c1
    return ThicknessProfile(ProfileExpr(base=c1), ProfileExpr(base=c2),
                            regime=regime, h_correction=h_correction)


# ----------------------------------------------------------------------
# shells
# ----------------------------------------------------------------------

@dataclass
class ShellDomain:
    """Thin shell around a hypersurface in normal coordinates.

    Points are z = x + t*n(x) with t in [-g1^h(x), g2^h(x)].  Construction
    verifies that every normal-offset factor 1 + t*kappa stays positive on a
    validation grid, i.e. the shell does not self-intersect.
    """

    surface: Hypersurface
    profile: ThicknessProfile
    h: float

    def __post_init__(self):
        if self.h <= 0:
            raise ConfigurationError("shell thickness scale h must be positive")
        if self.surface.quadrature_only:
            raise ConfigurationError(
                f"surface kind {self.surface.kind!r} supports quadrature only")
        self.profile.validate(self.surface)
        params = self.surface.validation_params()
        g1h, g2h = self.profile.h_values(params, self.h)
        curv = np.linalg.eigvalsh(self.surface.second_fundamental(params))
        for t in (-g1h, g2h):
            factors = 1.0 + t[:, None] * curv
            if np.min(factors) <= 0:
                raise ShellIntersectionError(
                    f"shell self-intersects at h={self.h}: "
                    f"min offset factor {np.min(factors):.3e}")

    def thickness_at(self, params):
        """(g1^h, g2^h) at the given surface parameters."""
        return self.profile.h_values(params, self.h)

    def jacobian(self, params, t):
        """det(Id + t*Pi) of the normal-coordinate map; must be positive."""
        II = self.surface.second_fundamental(params)
        t = np.asarray(t, dtype=float)
        k = II.shape[-1]
        A = np.eye(k) + t[..., None, None] * II
        det = np.linalg.det(A)
        if np.min(det) <= 0:
            raise ShellIntersectionError(
                f"non-positive shell jacobian (min {np.min(det):.3e})")
        return det

    def offset_tangents(self, params, side):
        """Chart tangents of the offset boundary x +/- g^h n, (..., dim, k)."""
        if side not in ("plus", "minus"):
            raise ConfigurationError(f"side must be 'plus' or 'minus': {side!r}")
        sign = 1.0 if side == "plus" else -1.0
        which = 1 if side == "plus" else 0
        T = self.surface.tangents(params)
        n = self.surface.unit_normal(params)
        Pi = self.surface.shape_operator(params)
        gh = self.profile.h_values(params, self.h)[which]
        scale = self.h_scale_for(which)
        expr = self.profile._expr(which)
        cols = []
        for j in range(self.surface.n_params):
            dg = scale * expr.param_derivative(params, j)
            col = T[..., j] + sign * (
                gh[..., None] * np.einsum("...de,...e->...d", Pi, T[..., j])
                + dg[..., None] * n)
            cols.append(col)
        return np.stack(cols, axis=-1)

    def h_scale_for(self, which):
        return self.profile.h_scale(self.h)[which]

    def offset_boundary_normal(self, params, side):
        """Exact outward unit normal of the offset boundary surface."""
        T = self.offset_tangents(params, side)
        n = self.surface.unit_normal(params)
        if self.surface.ambient_dim == 2:
            t = T[..., 0]
            cand = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        else:
            cand = np.cross(T[..., 0], T[..., 1])
        cand = _normalize(cand)
        want = 1.0 if side == "plus" else -1.0
        dots = np.sum(cand * n, axis=-1)
        if np.any(np.abs(dots) < 1e-10):
            raise GeometryError("offset boundary normal orientation degenerate")
        return cand * (np.sign(dots) * want)[..., None]


# ----------------------------------------------------------------------
# spec-level operation wrappers
# ----------------------------------------------------------------------

def surface_point(surface, params):
    return surface.point(params)


def unit_normal(surface, params):
    return surface.unit_normal(params)


def shape_operator(surface, params):
    return surface.shape_operator(params)


def shell_jacobian(shell, params, t):
    return shell.jacobian(params, t)


def offset_boundary_normal(shell, params, side):
    return shell.offset_boundary_normal(params, side)


def thickness_at(shell, params):
    return shell.thickness_at(params)


# ----------------------------------------------------------------------
# JSON decoding (geometry block of experiment configs)
# ----------------------------------------------------------------------

def surface_from_config(cfg):
    cfg = dict(cfg)
    try:
        kind = cfg.pop("kind")
    except KeyError:
        raise ConfigurationError("surface config requires 'kind'") from None
    return Hypersurface(kind, **cfg)


def profile_from_config(cfg, surface):
    cfg = dict(cfg)
    try:
        g1 = ProfileExpr.from_config(cfg.pop("g1"), surface)
        g2 = ProfileExpr.from_config(cfg.pop("g2"), surface)
    except KeyError as exc:
        raise ConfigurationError(f"profile config missing key: {exc}") from None
    regime = cfg.pop("regime", "H2")
    corr = tuple(cfg.pop("h_correction", (0.0, 0.0)))
    if cfg:
        raise ConfigurationError(f"unknown profile keys: {sorted(cfg)}")
    return ThicknessProfile(g1, g2, regime=regime, h_correction=corr)


def shell_from_config(cfg):
    """Build a ShellDomain from {"surface": ..., "profile": ..., "h": ...}."""
    cfg = dict(cfg)
    surface = surface_from_config(cfg.pop("surface"))
    profile = profile_from_config(cfg.pop("profile"), surface)
    try:
        h = float(cfg.pop("h"))
    except KeyError:
        raise ConfigurationError("shell config requires 'h'") from None
    if cfg:
        raise ConfigurationError(f"unknown shell config keys: {sorted(cfg)}")
    return ShellDomain(surface, profile, h)
