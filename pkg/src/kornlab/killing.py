"""Killing fields on closed hypersurfaces.

The space of Killing fields is extracted as the near-kernel of the surface
Korn pencil (symmetric-gradient form, mass + full-gradient form) over
tangent fields stored in local orthonormal frames.  Rigid tangent fields
(restrictions of ambient rigid-motion generators) come from the near-null
space of a small boundary-free Gram form and are available on the sphere as
well.  ``bochner_check`` verifies the curvature identity that equates the
full-gradient energy of a Killing field with the weighted second-fundamental
quadrature, plus its Gaussian-curvature variant for 2-surfaces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .discretization import (SphereQuadrature, SurfaceFormSet, SurfaceGrid,
                             ambient_to_frame, frame_to_ambient,
                             surface_dealias_penalty, surface_form_set)
from .errors import (AmbiguousKernelError, ConfigurationError,
                     PreconditionError, UnsupportedSurfaceError)
from .geometry import Hypersurface, ThicknessProfile


@dataclass
class ThresholdPolicy:
    """Near-kernel detection: eigenvalue below rel_threshold * median and a
    multiplicative gap to the first rejected eigenvalue."""

    rel_threshold: float = 1e-6
    gap_factor: float = 100.0


@dataclass
class KillingBasis:
    """Orthonormal (in L2(S)) tangent fields spanning a computed subspace.

    ``coeffs`` holds one frame-coefficient column per member.  For bases from
    the Korn pencil, ``eigenvalues`` are the leading pencil eigenvalues; for
    rigid bases they are the boundary-free Gram eigenvalues of the members.
    """

    grid: object
    coeffs: np.ndarray            # (n_nodes * k, dim_basis)
    eigenvalues: list
    threshold: float
    gap: float

    @property
    def dim(self):
        return self.coeffs.shape[1]

    def member(self, i):
        return self.coeffs[:, i]

    def ambient(self, i):
        return frame_to_ambient(self.grid, self.coeffs[:, i])

    def ambient_members(self):
        return [self.ambient(i) for i in range(self.dim)]


def _surface_grid(surface, resolution):
    resolution = tuple(int(n) for n in np.atleast_1d(resolution))
    return SurfaceGrid(surface, resolution)


def surface_forms(surface: Hypersurface, resolution) -> SurfaceFormSet:
    """Mass / gradient / symmetric-gradient forms over tangent frame fields."""
    if surface.quadrature_only:
        raise UnsupportedSurfaceError(
            "the sphere is quadrature-only; no surface differentiation grid")
    return surface_form_set(_surface_grid(surface, resolution))


def _mass_orthonormalize(grid, coeffs):
    """Orthonormalize frame-coefficient columns in the L2(S) inner product."""
    k = grid.frames.shape[-1]
    w = np.repeat(grid.weights, k)
    gram = coeffs.T @ (w[:, None] * coeffs)
    R = scipy.linalg.cholesky(gram)
    return coeffs @ np.linalg.inv(R)


def killing_basis(surface: Hypersurface, resolution,
                  policy: ThresholdPolicy | None = None) -> KillingBasis:
    """Near-kernel of the surface Korn pencil; its dimension is dim I(S).

    Raises AmbiguousKernelError when candidate kernel eigenvalues are not
    separated from the rest of the spectrum by the policy's gap factor.
    """
    policy = policy or ThresholdPolicy()
    forms = surface_forms(surface, resolution)
    grid = forms.grid
    # de-aliasing: aliased near-Nyquist modes otherwise enter the pencil
    # with spuriously small symmetric-gradient energy
    A = (forms.symgrad + surface_dealias_penalty(forms)).toarray()
    B = (forms.mass + forms.stiffness).toarray()
    evals = scipy.linalg.eigh(A, B, eigvals_only=True)
    evals = np.maximum(evals, 0.0)
    median = float(np.median(evals))
    threshold = policy.rel_threshold * median
    k = int(np.count_nonzero(evals < threshold))
    if k == 0:
        gap = float(evals[0] / threshold) if threshold > 0 else np.inf
        return KillingBasis(grid=grid,
                            coeffs=np.zeros((A.shape[0], 0)),
                            eigenvalues=list(evals[:4]),
                            threshold=threshold, gap=gap)
    gap = float(evals[k] / max(evals[k - 1], 1e-300))
    if gap < policy.gap_factor:
        raise AmbiguousKernelError(
            f"no spectral gap separating the candidate kernel "
            f"(gap {gap:.2e} < {policy.gap_factor})", evals[:k + 4])
    _, vecs = scipy.linalg.eigh(A, B, subset_by_index=[0, k - 1])
    coeffs = _mass_orthonormalize(grid, vecs)
    return KillingBasis(grid=grid, coeffs=coeffs,
                        eigenvalues=list(evals[:k + 3]),
                        threshold=threshold, gap=gap)


def rigid_tangent_basis(surface: Hypersurface, resolution,
                        rel_threshold=1e-10) -> KillingBasis:
    """Rigid-motion generators Az + b that are tangent along the surface."""
    from .discretization import rigid_generators

    if surface.quadrature_only:
        grid = SphereQuadrature(surface, resolution)
    else:
        grid = _surface_grid(surface, resolution)
    gens = rigid_generators(grid.dim)
    fields = [grid.points @ A.T + b for A, b in gens]
    dots = np.stack([np.sum(f * grid.normals, axis=-1) for f in fields],
                    axis=-1)
    gram = dots.T @ (grid.weights[:, None] * dots)
    evals, evecs = np.linalg.eigh(gram)
    keep = np.nonzero(evals < rel_threshold * max(evals[-1], 1e-300))[0]
    if keep.size == 0:
        return KillingBasis(grid=grid,
                            coeffs=np.zeros((grid.n_nodes
                                             * grid.frames.shape[-1], 0)),
                            eigenvalues=list(evals), threshold=rel_threshold,
                            gap=np.inf)
    cols = []
    for idx in keep:
        ambient = sum(c * f for c, f in zip(evecs[:, idx], fields))
        cols.append(ambient_to_frame(grid, ambient))
    coeffs = _mass_orthonormalize(grid, np.stack(cols, axis=-1))
    return KillingBasis(grid=grid, coeffs=coeffs,
                        eigenvalues=list(evals[keep]),
                        threshold=rel_threshold, gap=np.inf)


def restrict_profile(basis: KillingBasis,
                     profile: ThicknessProfile,
                     tol=1e-8) -> KillingBasis:
    """Sub-basis pointwise orthogonal to grad(g1 + g2), up to quadrature.

    Diagonalizes the small pairing form v -> integral |v . grad(g1+g2)|^2
    inside the span and keeps directions with Rayleigh quotient below tol.
    """
    grid = basis.grid
    if basis.dim == 0:
        return basis
    surface = grid.surface
    grad = (profile.surface_gradient(surface, grid.params, which=0)
            + profile.surface_gradient(surface, grid.params, which=1))
    members = [basis.ambient(i) for i in range(basis.dim)]
    dots = np.stack([np.sum(m * grad, axis=-1) for m in members], axis=-1)
    P = dots.T @ (grid.weights[:, None] * dots)
    evals, evecs = np.linalg.eigh(P)
    keep = np.nonzero(evals < tol)[0]
    coeffs = basis.coeffs @ evecs[:, keep]
    if keep.size:
        coeffs = _mass_orthonormalize(grid, coeffs)
    return KillingBasis(grid=grid, coeffs=coeffs,
                        eigenvalues=list(basis.eigenvalues[:keep.size]),
                        threshold=basis.threshold, gap=basis.gap)


# ----------------------------------------------------------------------
# curvature identity
# ----------------------------------------------------------------------

@dataclass
class BochnerReport:
    lhs: float
    rhs: float
    rel_error: float
    covariant: tuple | None = None   # (lhs, rhs, rel_error) for 2-surfaces

    def as_dict(self):
        out = {"lhs": self.lhs, "rhs": self.rhs, "relerr": self.rel_error}
        if self.covariant is not None:
            out["covariant"] = {"lhs": self.covariant[0],
                                "rhs": self.covariant[1],
                                "relerr": self.covariant[2]}
        return out


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def bochner_check(surface: Hypersurface, fieldspec, resolution,
                  killing_tol=1e-8) -> BochnerReport:
    """Check |grad v|^2 integral against the curvature pairing for Killing v.

    ``fieldspec`` is either a rigid generator pair (A, b) — usable on every
    surface including the sphere — or a frame-coefficient / ambient array on
    the matching periodic surface grid.  Non-Killing input raises
    PreconditionError, since the identity holds only on the kernel.
    """
    if isinstance(fieldspec, tuple) and len(fieldspec) == 2:
        A, b = (np.asarray(x, dtype=float) for x in fieldspec)
        if surface.quadrature_only:
            grid = SphereQuadrature(surface, resolution)
        else:
            grid = _surface_grid(surface, resolution)
        v = grid.points @ A.T + b
        scale = np.sqrt(np.max(np.sum(v * v, axis=-1)))
        tangency = np.max(np.abs(np.sum(v * grid.normals, axis=-1)))
        if tangency > 1e-8 * max(scale, 1e-300):
            raise PreconditionError(
                f"rigid field is not tangent (residual {tangency:.2e}); "
                "the identity holds only for Killing fields")
        # full gradient along frame directions is exactly A e_a
        Ae = np.einsum("ce,nea->nca", A, grid.frames)
        lhs = float(np.sum(grid.weights * np.sum(Ae * Ae, axis=(-2, -1))))
        f = np.einsum("nda,nd->na", grid.frames, v)
        cov_grad = np.einsum("ndb,nda->nba", grid.frames, Ae)
    else:
        if surface.quadrature_only:
            raise UnsupportedSurfaceError(
                "grid fields on the sphere are not differentiable here; "
                "pass a rigid generator (A, b)")
        grid = _surface_grid(surface, resolution)
        vals = np.asarray(fieldspec, dtype=float).reshape(-1)
        k = grid.frames.shape[-1]
        if vals.size == grid.n_nodes * k:
            f = vals.reshape(grid.n_nodes, k)
            v = frame_to_ambient(grid, vals)
        elif vals.size == grid.n_nodes * grid.dim:
            v = vals.reshape(grid.n_nodes, grid.dim)
            tangency = np.max(np.abs(np.sum(v * grid.normals, axis=-1)))
            if tangency > 1e-8 * max(np.max(np.abs(v)), 1e-300):
                raise PreconditionError("ambient field is not tangent")
            f = np.einsum("nda,nd->na", grid.frames, v)
        else:
            raise ConfigurationError(
                f"field size {vals.size} fits neither frame nor ambient DOFs")
        dv = grid.frame_derivatives(v.reshape(-1), grid.dim)  # (n, dim, k)
        lhs = float(np.sum(grid.weights * np.sum(dv * dv, axis=(-2, -1))))
        # Killing precondition via the symmetrized tangential gradient
        sym = np.einsum("nda,ndb->nab", grid.frames, dv)
        sym = 0.5 * (sym + np.swapaxes(sym, -1, -2))
        q_energy = float(np.sum(grid.weights * np.sum(sym**2, axis=(-2, -1))))
        m_energy = float(np.sum(grid.weights * np.sum(v * v, axis=-1)))
        if q_energy > killing_tol * max(m_energy + lhs, 1e-300):
            raise PreconditionError(
                f"field is not near-Killing (relative symmetric-gradient "
                f"energy {q_energy / max(m_energy + lhs, 1e-300):.2e})")
        cov_grad = np.einsum("ndb,nda->nba", grid.frames, dv)

    II = grid.second_fundamental
    tr = np.trace(II, axis1=-2, axis2=-1)
    pair = np.einsum("nab,na,nb->n", II, f, f)
    rhs = float(np.sum(grid.weights * tr * pair))
    report = BochnerReport(lhs=lhs, rhs=rhs, rel_error=_rel(lhs, rhs))
    if grid.dim == 3:
        lhs_cov = float(np.sum(grid.weights
                               * np.sum(cov_grad**2, axis=(-2, -1))))
        det = np.linalg.det(II)
        rhs_cov = float(np.sum(grid.weights * det * np.sum(f * f, axis=-1)))
        report.covariant = (lhs_cov, rhs_cov, _rel(lhs_cov, rhs_cov))
    return report


# ----------------------------------------------------------------------
# analytic Killing fields of the registered families
# ----------------------------------------------------------------------

def intrinsic_killing_field(surface: Hypersurface, params):
    """A closed-form Killing field: unit tangent for curves, the axial
    rotation generator for the torus and the sphere."""
    if surface.kind in ("circle", "ellipse"):
        t = surface.tangents(params)[..., 0]
        return t / np.linalg.norm(t, axis=-1, keepdims=True)
    if surface.kind in ("torus", "sphere"):
        x = surface.point(params)
        return np.stack([-x[..., 1], x[..., 0], np.zeros_like(x[..., 0])],
                        axis=-1)
    raise ConfigurationError(
        f"no closed-form Killing field for surface kind {surface.kind!r}")
