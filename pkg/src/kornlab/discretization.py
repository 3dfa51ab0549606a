"""Tensor-product grids on S and S^h, ambient gradients, and quadratic forms.

The shell chart is (params, s) -> x(params) + t(params, s) * n(params) with
t = -g1^h + s*(g1^h + g2^h), s in [0, 1].  Differentiation is spectral
(Fourier differentiation matrices) in the periodic surface parameters and
2nd-order finite differences in s (one-sided at the two boundary layers).
Ambient gradients follow by contracting parametric derivatives with the
inverse chart Jacobian, whose columns are (Id + t*Pi) tau_j + (dt/du_j) n
and (g1^h + g2^h) n.

Quadrature is trapezoidal everywhere: uniform weights in the periodic
directions (spectrally accurate there) and composite trapezoid in s, with
the metric factor det(Id + t*Pi) * area_element * (g1^h + g2^h).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.linalg import toeplitz

from .errors import (ConfigurationError, DimensionError, GeometryError,
                     ResolutionError)
from .geometry import Hypersurface, ShellDomain

MIN_NODES_PER_DIRECTION = 8


def fourier_diff_matrix(n):
    """Spectral differentiation matrix for n uniform nodes on [0, 2*pi).

    Exact (to rounding) for trigonometric polynomials of degree < n/2.
    """
    h = 2 * np.pi / n
    k = np.arange(1, n)
    if n % 2 == 0:
        col = 0.5 * (-1.0) ** k / np.tan(k * h / 2)
    else:
        col = 0.5 * (-1.0) ** k / np.sin(k * h / 2)
    col = np.concatenate(([0.0], col))
    return toeplitz(col, -col)


def line_diff_matrix(n):
    """2nd-order differentiation on n uniform nodes of [0, 1], one-sided ends."""
    d = 1.0 / (n - 1)
    D = np.zeros((n, n))
    for i in range(1, n - 1):
        D[i, i - 1] = -0.5 / d
        D[i, i + 1] = 0.5 / d
    D[0, 0], D[0, 1], D[0, 2] = -1.5 / d, 2.0 / d, -0.5 / d
    D[-1, -1], D[-1, -2], D[-1, -3] = 1.5 / d, -2.0 / d, 0.5 / d
    return D


def trapezoid_weights(n):
    w = np.full(n, 1.0 / (n - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def lowpass_projector(n, cut=None):
    """Symmetric projector keeping Fourier modes |k| <= cut (default n//3).

    Quadratic forms of nodal fields alias for modes above about n/3; the
    complement of this projector isolates that unreliable band.
    """
    if cut is None:
        cut = n // 3
    mask = np.zeros(n)
    k = np.fft.fftfreq(n, d=1.0 / n)
    mask[np.abs(k) <= cut] = 1.0
    F = np.fft.fft(np.eye(n), axis=0)
    P = np.real(np.fft.ifft(mask[:, None] * F, axis=0))
    return 0.5 * (P + P.T)


def _apply_along_axis(matrix, arr, axis):
    moved = np.moveaxis(arr, axis, 0)
    out = np.tensordot(matrix, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def _check_resolution(shape):
    for n in shape:
        if n < MIN_NODES_PER_DIRECTION:
            raise ResolutionError(
                f"at least {MIN_NODES_PER_DIRECTION} nodes per direction "
                f"required, got {shape}")


class SurfaceGrid:
    """Uniform periodic grid on a closed hypersurface (not the sphere)."""

    def __init__(self, surface: Hypersurface, shape):
        if surface.quadrature_only:
            raise ConfigurationError(
                "the sphere has no periodic chart grid; use SphereQuadrature")
        shape = tuple(int(n) for n in shape)
        if len(shape) != surface.n_params:
            raise ConfigurationError(
                f"surface of kind {surface.kind!r} needs "
                f"{surface.n_params} grid sizes, got {shape}")
        _check_resolution(shape)
        self.surface = surface
        self.shape = shape
        self.dim = surface.ambient_dim
        self.n_params = surface.n_params
        axes = [np.arange(n) * (2 * np.pi / n) for n in shape]
        if self.n_params == 1:
            self.params = axes[0][:, None]
        else:
            g = np.meshgrid(*axes, indexing="ij")
            self.params = np.stack([a.ravel() for a in g], axis=-1)
        self.n_nodes = self.params.shape[0]
        self.points = surface.point(self.params)
        self.tangents = surface.tangents(self.params)
        self.normals = surface.unit_normal(self.params)
        self.frames, self.frame_coeffs = surface.frames(self.params)
        self.second_fundamental = surface.second_fundamental(self.params)
        self.shape_operators = np.einsum(
            "nda,nab,neb->nde", self.frames, self.second_fundamental,
            self.frames)
        self.area = surface.area_element(self.params)
        self.param_weight = np.prod([2 * np.pi / n for n in shape])
        self.weights = self.area * self.param_weight
        self.diff_matrices = [fourier_diff_matrix(n) for n in shape]

    def as_grid(self, values, ncomp=None):
        values = np.asarray(values)
        if ncomp is None:
            ncomp = values.size // self.n_nodes
        return values.reshape(self.shape + ((ncomp,) if ncomp > 1 else ()))

    def param_derivatives(self, values, ncomp):
        """Spectral derivative along each parameter, shape (n, ncomp, k)."""
        arr = np.asarray(values, dtype=float).reshape(self.shape + (ncomp,))
        outs = []
        for j, D in enumerate(self.diff_matrices):
            outs.append(_apply_along_axis(D, arr, j).reshape(-1, ncomp))
        return np.stack(outs, axis=-1)

    def frame_derivatives(self, values, ncomp):
        """Derivatives along the orthonormal frame directions, (n, ncomp, k)."""
        dp = self.param_derivatives(values, ncomp)
        return np.einsum("ncj,nja->nca", dp, self.frame_coeffs)

    def ambient_tangential_gradient(self, values, ncomp):
        """Gradient matrix sum_a (d_a f) x e_a, shape (n, ncomp, dim)."""
        df = self.frame_derivatives(values, ncomp)
        return np.einsum("nca,nda->ncd", df, self.frames)

    def integrate(self, values):
        return float(np.sum(self.weights * np.asarray(values)))

    # sparse node-wise derivative operators, built on demand
    def node_diff_operators(self):
        ops = []
        eye = sp.identity
        for j in range(self.n_params):
            D = sp.csr_matrix(self.diff_matrices[j])
            left = int(np.prod(self.shape[:j], dtype=int))
            right = int(np.prod(self.shape[j + 1:], dtype=int))
            op = D
            if left > 1:
                op = sp.kron(eye(left), op)
            if right > 1:
                op = sp.kron(op, eye(right))
            ops.append(sp.csr_matrix(op))
        return ops


class SphereQuadrature:
    """Latitude-longitude quadrature on the sphere.

    Latitudes are Gauss-Legendre in cos(polar), so the sin-weighted latitude
    integral is exact for smooth integrands; longitudes are uniform.
    """

    def __init__(self, surface: Hypersurface, shape):
        if surface.kind != "sphere":
            raise ConfigurationError("SphereQuadrature requires a sphere")
        n_th, n_ph = (int(n) for n in shape)
        _check_resolution((n_th, n_ph))
        self.surface = surface
        self.shape = (n_th, n_ph)
        self.dim = 3
        x, w = np.polynomial.legendre.leggauss(n_th)
        theta = np.arccos(x[::-1])
        w_th = w[::-1]
        phi = np.arange(n_ph) * (2 * np.pi / n_ph)
        T, P = np.meshgrid(theta, phi, indexing="ij")
        self.params = np.stack([T.ravel(), P.ravel()], axis=-1)
        self.n_nodes = self.params.shape[0]
        self.points = surface.point(self.params)
        self.normals = surface.unit_normal(self.params)
        self.frames, self.frame_coeffs = surface.frames(self.params)
        self.second_fundamental = surface.second_fundamental(self.params)
        W = np.broadcast_to(w_th[:, None], (n_th, n_ph))
        self.weights = (surface.radius ** 2 * 2 * np.pi / n_ph) * W.ravel()

    def integrate(self, values):
        return float(np.sum(self.weights * np.asarray(values)))


class ShellGrid:
    """Tensor-product grid over (surface parameters) x (normal coordinate)."""

    def __init__(self, shell: ShellDomain, resolution):
        resolution = tuple(int(n) for n in resolution)
        if len(resolution) != shell.surface.n_params + 1:
            raise ConfigurationError(
                f"shell resolution needs {shell.surface.n_params + 1} sizes, "
                f"got {resolution}")
        _check_resolution(resolution)
        self.shell = shell
        self.resolution = resolution
        self.nt = resolution[-1]
        self.surface_grid = SurfaceGrid(shell.surface, resolution[:-1])
        sg = self.surface_grid
        self.dim = sg.dim
        self.n_surf = sg.n_nodes
        self.n_nodes = self.n_surf * self.nt

        self.s = np.arange(self.nt) / (self.nt - 1)
        g1h, g2h = shell.thickness_at(sg.params)
        self.g1h, self.g2h = g1h, g2h
        self.thickness = g1h + g2h
        # t has shape (n_surf, nt)
        self.t = -g1h[:, None] + self.s[None, :] * self.thickness[:, None]

        pts = sg.points[:, None, :] + self.t[..., None] * sg.normals[:, None, :]
        self.points = pts.reshape(self.n_nodes, self.dim)

        # metric factor det(Id + t*Pi) from the second fundamental form
        II = sg.second_fundamental
        if sg.n_params == 1:
            det = 1.0 + self.t * II[:, None, 0, 0]
        else:
            tr = np.trace(II, axis1=-2, axis2=-1)
            dt = np.linalg.det(II)
            det = 1.0 + self.t * tr[:, None] + self.t ** 2 * dt[:, None]
        if np.min(det) <= 0:
            raise GeometryError("shell grid hits a non-positive jacobian")
        self.offset_det = det

        w_s = trapezoid_weights(self.nt)
        w = (sg.weights[:, None] * w_s[None, :] * self.thickness[:, None]
             * det)
        self.weights = w.reshape(self.n_nodes)

        self._build_chart_jacobians()
        self._build_boundary()
        self.ds_matrix = line_diff_matrix(self.nt)

    # ------------------------------------------------------------------

    def _build_chart_jacobians(self):
        sg = self.surface_grid
        shell = self.shell
        k = sg.n_params
        n, dim, nt = self.n_surf, self.dim, self.nt
        J = np.zeros((n, nt, dim, dim))
        # d(g_i^h)/d(param_j), shape (n, k)
        scale1, scale2 = shell.profile.h_scale(shell.h)
        dg1 = np.stack([scale1 * shell.profile.g1.param_derivative(sg.params, j)
                        for j in range(k)], axis=-1)
        dg2 = np.stack([scale2 * shell.profile.g2.param_derivative(sg.params, j)
                        for j in range(k)], axis=-1)
        Pi_tau = np.einsum("nde,nej->ndj", sg.shape_operators, sg.tangents)
        for j in range(k):
            # (Id + t Pi) tau_j + (dt/du_j) n
            dt_dj = (-dg1[:, j][:, None]
                     + self.s[None, :] * (dg1[:, j] + dg2[:, j])[:, None])
            J[..., j] = (sg.tangents[:, None, :, j]
                         + self.t[..., None] * Pi_tau[:, None, :, j]
                         + dt_dj[..., None] * sg.normals[:, None, :])
        J[..., k] = self.thickness[:, None, None] * sg.normals[:, None, :]
        self.chart_jacobian = J.reshape(self.n_nodes, dim, dim)
        self.chart_jacobian_inv = np.linalg.inv(self.chart_jacobian)

    def _build_boundary(self):
        sg = self.surface_grid
        self.boundary_index = {
            "minus": np.arange(self.n_surf) * self.nt,
            "plus": np.arange(self.n_surf) * self.nt + (self.nt - 1),
        }
        self.boundary_normals = {}
        self.boundary_tangent_frames = {}
        self.boundary_weights = {}
        for side in ("plus", "minus"):
            nh = self.shell.offset_boundary_normal(sg.params, side)
            T = self.shell.offset_tangents(sg.params, side)
            # orthonormal tangents of the offset surface, parameter order
            cols = []
            for j in range(sg.n_params):
                v = T[..., j]
                v = v - np.sum(v * nh, axis=-1, keepdims=True) * nh
                for prev in cols:
                    v = v - np.sum(v * prev, axis=-1, keepdims=True) * prev
                norms = np.linalg.norm(v, axis=-1, keepdims=True)
                if np.any(norms < 1e-13):
                    raise GeometryError("degenerate offset tangent basis")
                cols.append(v / norms)
            frame = np.stack(cols, axis=-1)
            ortho = np.einsum("nda,ndb->nab", frame, frame)
            err = np.max(np.abs(ortho - np.eye(sg.n_params)))
            err = max(err, np.max(np.abs(
                np.einsum("nda,nd->na", frame, nh))))
            if err > 1e-12:
                raise GeometryError(
                    f"boundary frame not orthonormal (residual {err:.2e})")
            self.boundary_normals[side] = nh
            self.boundary_tangent_frames[side] = frame
            if self.dim == 2:
                area = np.linalg.norm(T[..., 0], axis=-1)
            else:
                area = np.linalg.norm(np.cross(T[..., 0], T[..., 1]), axis=-1)
            self.boundary_weights[side] = area * sg.param_weight

    # ------------------------------------------------------------------
    # field access helpers
    # ------------------------------------------------------------------

    def ncomp(self, values):
        values = np.asarray(values)
        if values.size % self.n_nodes:
            raise DimensionError(
                f"field of size {values.size} does not fit {self.n_nodes} nodes")
        return values.size // self.n_nodes

    def as_fiber_grid(self, values, ncomp=None):
        """Reshape flat DOFs to (n_surf, nt, ncomp)."""
        values = np.asarray(values, dtype=float)
        if ncomp is None:
            ncomp = self.ncomp(values)
        return values.reshape(self.n_surf, self.nt, ncomp)

    def param_derivatives(self, values, ncomp=None):
        """All chart derivatives of a nodal field, shape (n_nodes, ncomp, k+1)."""
        if ncomp is None:
            ncomp = self.ncomp(values)
        sg = self.surface_grid
        arr = np.asarray(values, dtype=float).reshape(
            sg.shape + (self.nt, ncomp))
        outs = []
        for j, D in enumerate(sg.diff_matrices):
            outs.append(_apply_along_axis(D, arr, j).reshape(-1, ncomp))
        outs.append(_apply_along_axis(self.ds_matrix, arr,
                                      len(sg.shape)).reshape(-1, ncomp))
        return np.stack(outs, axis=-1)

    def gradient(self, values, ncomp=None):
        """Ambient gradient samples du_c/dz_j, shape (n_nodes, ncomp, dim)."""
        if ncomp is None:
            ncomp = self.ncomp(values)
        dp = self.param_derivatives(values, ncomp)
        return np.einsum("nck,nkj->ncj", dp, self.chart_jacobian_inv)

    def boundary_values(self, values, side):
        arr = self.as_fiber_grid(values)
        return arr[:, -1, :] if side == "plus" else arr[:, 0, :]

    def boundary_normal_residual(self, values, side):
        vals = self.boundary_values(values, side)
        return float(np.max(np.abs(
            np.sum(vals * self.boundary_normals[side], axis=-1))))

    # quadrature energies (no assembled matrices needed)

    def integrate(self, values):
        return float(np.sum(self.weights * np.asarray(values)))

    def l2_energy(self, values):
        arr = self.as_fiber_grid(values).reshape(self.n_nodes, -1)
        return self.integrate(np.sum(arr * arr, axis=-1))

    def gradient_energy(self, values):
        g = self.gradient(values)
        return self.integrate(np.sum(g * g, axis=(-2, -1)))

    def symgrad_energy(self, values):
        g = self.gradient(values)
        if g.shape[-2] != g.shape[-1]:
            raise DimensionError("symmetric gradient needs a vector field")
        d = 0.5 * (g + np.swapaxes(g, -1, -2))
        return self.integrate(np.sum(d * d, axis=(-2, -1)))

    def w12_norm(self, values):
        return float(np.sqrt(self.l2_energy(values)
                             + self.gradient_energy(values)))

    def boundary_l2(self, values, side, component=None):
        """L2 norm over one boundary layer; optionally of v . component."""
        vals = self.boundary_values(values, side)
        if component is not None:
            vals = np.sum(vals * component, axis=-1, keepdims=True)
        w = self.boundary_weights[side]
        return float(np.sqrt(np.sum(w * np.sum(vals * vals, axis=-1))))

    def dump_node_table(self, path):
        """Write the node table as CSV for debugging."""
        import csv

        sg = self.surface_grid
        pcols = [f"param{j}" for j in range(sg.n_params)]
        xcols = [f"x{j}" for j in range(self.dim)]
        bflag = np.zeros(self.n_nodes, dtype=int)
        bflag[self.boundary_index["plus"]] = 1
        bflag[self.boundary_index["minus"]] = -1
        t_flat = self.t.reshape(-1)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["index"] + pcols + ["t"] + xcols
                        + ["weight", "boundary"])
            for i in range(self.n_nodes):
                p = sg.params[i // self.nt]
                wr.writerow([i] + [repr(v) for v in p] + [repr(t_flat[i])]
                            + [repr(v) for v in self.points[i]]
                            + [repr(self.weights[i]), bflag[i]])


# ----------------------------------------------------------------------
# fields
# ----------------------------------------------------------------------

@dataclass
class FieldDOFs:
    """Flat nodal vector field; ``embedding`` set for constraint-reduced DOFs."""

    values: np.ndarray
    embedding: "ConstraintEmbedding | None" = None

    @property
    def reduced(self):
        return self.embedding is not None


def dof_values(field):
    if isinstance(field, FieldDOFs):
        return field.values
    return np.asarray(field, dtype=float)


# ----------------------------------------------------------------------
# quadratic forms
# ----------------------------------------------------------------------

@dataclass
class SurfaceFormSet:
    """Mass / full-gradient / symmetric-gradient forms over tangent frame DOFs."""

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    symgrad: sp.csr_matrix
    grid: SurfaceGrid


@dataclass
class QuadraticFormSet:
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    symgrad: sp.csr_matrix
    trace_plus: sp.csr_matrix
    trace_minus: sp.csr_matrix
    mass_scalar: sp.csr_matrix
    stiffness_scalar: sp.csr_matrix
    trace_plus_scalar: sp.csr_matrix
    trace_minus_scalar: sp.csr_matrix
    surface: SurfaceFormSet
    grid: ShellGrid


def _symmetrize(F):
    F = sp.csr_matrix(F) if sp.issparse(F) else F
    return 0.5 * (F + F.T)


def _component_selector(n_nodes, ncomp, c):
    rows = np.arange(n_nodes)
    cols = rows * ncomp + c
    data = np.ones(n_nodes)
    return sp.csr_matrix((data, (rows, cols)),
                         shape=(n_nodes, n_nodes * ncomp))


def _interleaved_diag(w, ncomp):
    return sp.diags(np.repeat(np.asarray(w, dtype=float), ncomp))


def _shell_node_diff_operators(grid: ShellGrid):
    sg = grid.surface_grid
    ops = []
    for j in range(sg.n_params):
        D = sp.csr_matrix(sg.diff_matrices[j])
        left = int(np.prod(sg.shape[:j], dtype=int))
        right = int(np.prod(sg.shape[j + 1:], dtype=int)) * grid.nt
        op = D
        if left > 1:
            op = sp.kron(sp.identity(left), op)
        op = sp.kron(op, sp.identity(right))
        ops.append(sp.csr_matrix(op))
    Ds = sp.kron(sp.identity(grid.n_surf), sp.csr_matrix(grid.ds_matrix))
    ops.append(sp.csr_matrix(Ds))
    return ops


def assemble_forms(grid: ShellGrid) -> QuadraticFormSet:
    """Assemble all quadratic forms of the shell grid as sparse matrices."""
    dim = grid.dim
    n = grid.n_nodes
    diffs = _shell_node_diff_operators(grid)
    Jinv = grid.chart_jacobian_inv
    W = sp.diags(grid.weights)

    # A_j: nodal operator for the ambient derivative d/dz_j of a scalar field
    A = []
    for j in range(dim):
        op = None
        for k, Dk in enumerate(diffs):
            term = sp.diags(Jinv[:, k, j]) @ Dk
            op = term if op is None else op + term
        A.append(sp.csr_matrix(op))

    mass_scalar = sp.diags(grid.weights).tocsr()
    stiffness_scalar = None
    for j in range(dim):
        term = A[j].T @ W @ A[j]
        stiffness_scalar = term if stiffness_scalar is None \
            else stiffness_scalar + term
    stiffness_scalar = _symmetrize(stiffness_scalar)

    sel = [_component_selector(n, dim, c) for c in range(dim)]
    mass = _interleaved_diag(grid.weights, dim).tocsr()
    stiffness = None
    for c in range(dim):
        term = sel[c].T @ stiffness_scalar @ sel[c]
        stiffness = term if stiffness is None else stiffness + term
    stiffness = _symmetrize(stiffness)

    symgrad = None
    G = {(c, j): A[j] @ sel[c] for c in range(dim) for j in range(dim)}
    for c in range(dim):
        for j in range(dim):
            Dcj = 0.5 * (G[(c, j)] + G[(j, c)])
            term = Dcj.T @ W @ Dcj
            symgrad = term if symgrad is None else symgrad + term
    symgrad = _symmetrize(symgrad)

    bw = {}
    for side in ("plus", "minus"):
        vec = np.zeros(n)
        vec[grid.boundary_index[side]] = grid.boundary_weights[side]
        bw[side] = vec
    trace_plus = _interleaved_diag(bw["plus"], dim).tocsr()
    trace_minus = _interleaved_diag(bw["minus"], dim).tocsr()

    surface = surface_form_set(grid.surface_grid)
    return QuadraticFormSet(
        mass=mass, stiffness=stiffness, symgrad=symgrad,
        trace_plus=trace_plus, trace_minus=trace_minus,
        mass_scalar=mass_scalar, stiffness_scalar=stiffness_scalar,
        trace_plus_scalar=sp.diags(bw["plus"]).tocsr(),
        trace_minus_scalar=sp.diags(bw["minus"]).tocsr(),
        surface=surface, grid=grid)


def surface_form_set(sgrid: SurfaceGrid) -> SurfaceFormSet:
    """Forms over tangent fields stored in local orthonormal frames.

    DOF layout: [node * k + a] holding the coefficient of frame vector e_a.
    The symmetric-gradient form encodes the symmetrized tangential gradient
    0.5*(e_a . d_b v + e_b . d_a v); the stiffness form is the full ambient
    gradient of the tangent field along frame directions.
    """
    n = sgrid.n_nodes
    dim = sgrid.dim
    k = sgrid.n_params
    E = sgrid.frames          # (n, dim, k)
    C = sgrid.frame_coeffs    # (n, k, k)

    # frame -> ambient embedding F: (n*dim) x (n*k)
    rows, cols, data = [], [], []
    for c in range(dim):
        for a in range(k):
            rows.append(np.arange(n) * dim + c)
            cols.append(np.arange(n) * k + a)
            data.append(E[:, c, a])
    F = sp.csr_matrix((np.concatenate(data),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n * dim, n * k))

    node_diffs = sgrid.node_diff_operators()
    diffs_dim = [sp.kron(D, sp.identity(dim)).tocsr() for D in node_diffs]

    # O_a: derivative of an ambient-component field along frame direction a
    O = []
    for a in range(k):
        op = None
        for j in range(k):
            term = _interleaved_diag(C[:, j, a], dim) @ diffs_dim[j]
            op = term if op is None else op + term
        O.append(sp.csr_matrix(op))

    # Edot_a: nodewise dot with e_a, (n) x (n*dim)
    Edot = []
    for a in range(k):
        rows = np.repeat(np.arange(n), dim)
        cols = np.arange(n * dim)
        Edot.append(sp.csr_matrix((E[:, :, a].ravel(), (rows, cols)),
                                  shape=(n, n * dim)))

    W = sp.diags(sgrid.weights)
    W_dim = _interleaved_diag(sgrid.weights, dim)

    mass = _symmetrize(F.T @ W_dim @ F)
    stiffness = None
    for a in range(k):
        OF = O[a] @ F
        term = OF.T @ W_dim @ OF
        stiffness = term if stiffness is None else stiffness + term
    stiffness = _symmetrize(stiffness)

    symgrad = None
    for a in range(k):
        for b in range(k):
            R = 0.5 * (Edot[a] @ O[b] + Edot[b] @ O[a]) @ F
            term = R.T @ W @ R
            symgrad = term if symgrad is None else symgrad + term
    symgrad = _symmetrize(symgrad)

    return SurfaceFormSet(mass=mass, stiffness=stiffness, symgrad=symgrad,
                          grid=sgrid)


def frame_to_ambient(sgrid: SurfaceGrid, frame_dofs):
    """Map frame-coefficient DOFs to an ambient field (n_nodes, dim)."""
    coeff = np.asarray(frame_dofs, dtype=float).reshape(sgrid.n_nodes,
                                                        sgrid.n_params)
    return np.einsum("nda,na->nd", sgrid.frames, coeff)


def ambient_to_frame(sgrid: SurfaceGrid, ambient):
    """Project an ambient field onto the tangent frames (drops normal part)."""
    ambient = np.asarray(ambient, dtype=float).reshape(sgrid.n_nodes,
                                                       sgrid.dim)
    return np.einsum("nda,nd->na", sgrid.frames, ambient).reshape(-1)


# ----------------------------------------------------------------------
# constraints
# ----------------------------------------------------------------------

TANGENCY_CHOICES = ("none", "plus", "minus", "both")
ORTHOGONALITY_CHOICES = ("none", "rigid", "killing", "killing-profile")


@dataclass
class ConstraintSpec:
    """Boundary tangency plus an orthogonality family.

    ``alpha`` records the cone angle of the admissible set; enforcement is
    exact orthogonality, the alpha = 0 member of every cone.
    """

    tangency: str = "none"
    orthogonality: str = "none"
    alpha: float = 0.0

    def __post_init__(self):
        if self.tangency not in TANGENCY_CHOICES:
            raise ConfigurationError(f"unknown tangency: {self.tangency!r}")
        if self.orthogonality not in ORTHOGONALITY_CHOICES:
            raise ConfigurationError(
                f"unknown orthogonality family: {self.orthogonality!r}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigurationError("alpha must lie in [0, 1)")

    @property
    def sides(self):
        return {"none": (), "plus": ("plus",), "minus": ("minus",),
                "both": ("plus", "minus")}[self.tangency]


@dataclass
class ConstraintEmbedding:
    """Orthonormal embedding of the reduced DOF space into the full one."""

    tangency_map: sp.csr_matrix
    null_basis: np.ndarray | None

    @property
    def reduced_dim(self):
        if self.null_basis is None:
            return self.tangency_map.shape[1]
        return self.null_basis.shape[1]

    @property
    def full_dim(self):
        return self.tangency_map.shape[0]

    def embed(self, reduced):
        reduced = np.asarray(reduced, dtype=float)
        if self.null_basis is not None:
            reduced = self.null_basis @ reduced
        return self.tangency_map @ reduced

    def restrict(self, full):
        out = self.tangency_map.T @ np.asarray(full, dtype=float)
        if self.null_basis is not None:
            out = self.null_basis.T @ out
        return out

    def reduce_form(self, F):
        E = self.tangency_map
        red = (E.T @ F @ E).tocsr() if sp.issparse(F) else E.T @ F @ E
        if self.null_basis is None:
            return _symmetrize(red)
        N = self.null_basis
        red = N.T @ (red @ N)
        return 0.5 * (red + red.T)


def rigid_generators(dim):
    """Basis of the rigid-motion generator space: rotations then translations."""
    gens = []
    for i in range(dim):
        for j in range(i + 1, dim):
            A = np.zeros((dim, dim))
            A[i, j], A[j, i] = -1.0, 1.0
            gens.append((A, np.zeros(dim)))
    for i in range(dim):
        b = np.zeros(dim)
        b[i] = 1.0
        gens.append((np.zeros((dim, dim)), b))
    return gens


def sample_rigid_field(grid: ShellGrid, A, b):
    vals = grid.points @ np.asarray(A, dtype=float).T + np.asarray(b, float)
    return vals.reshape(-1)


def rigid_boundary_basis(grid: ShellGrid, rel_threshold=1e-10):
    """Rigid fields tangent on both offset boundaries (may be empty).

    Found as the near-null space of the boundary Gram form
    (A, b) -> integral over the boundary of |(Az + b) . n^h|^2.
    """
    gens = rigid_generators(grid.dim)
    m = len(gens)
    residuals = []
    for A, b in gens:
        cols = []
        for side in ("plus", "minus"):
            vals = grid.boundary_values(sample_rigid_field(grid, A, b), side)
            dots = np.sum(vals * grid.boundary_normals[side], axis=-1)
            cols.append(np.sqrt(grid.boundary_weights[side]) * dots)
        residuals.append(np.concatenate(cols))
    Rmat = np.stack(residuals, axis=-1)      # (2*n_surf, m)
    gram = Rmat.T @ Rmat
    evals, evecs = np.linalg.eigh(gram)
    keep = evals < rel_threshold * max(evals[-1], 1e-300)
    fields = []
    for idx in np.nonzero(keep)[0]:
        coeff = evecs[:, idx]
        A = sum(c * g[0] for c, g in zip(coeff, gens))
        b = sum(c * g[1] for c, g in zip(coeff, gens))
        fields.append(sample_rigid_field(grid, A, b))
    return fields


def apply_constraints(grid: ShellGrid, forms: QuadraticFormSet,
                      spec: ConstraintSpec, killing_fields=None):
    """Reduce the vector forms by tangency elimination and M-orthogonality.

    Tangency rotates each boundary node into its (n^h, tangent frame) basis
    and deletes the n^h component.  Orthogonality projects onto the
    M-orthogonal complement of the supplied family: sampled rigid fields
    for 'rigid', trivial extensions of the supplied surface Killing basis
    for 'killing' / 'killing-profile'.

    Returns (reduced QuadraticFormSet, ConstraintEmbedding).
    """
    n = grid.n_nodes
    dim = grid.dim

    constrained = np.zeros(n, dtype=bool)
    for side in spec.sides:
        constrained[grid.boundary_index[side]] = True

    rows, cols, data = [], [], []
    col = 0
    frame_lookup = {}
    for side in spec.sides:
        for local, node in enumerate(grid.boundary_index[side]):
            frame_lookup[node] = grid.boundary_tangent_frames[side][local]
    for node in range(n):
        if not constrained[node]:
            for c in range(dim):
                rows.append(node * dim + c)
                cols.append(col)
                data.append(1.0)
                col += 1
        else:
            frame = frame_lookup[node]
            for a in range(frame.shape[-1]):
                for c in range(dim):
                    rows.append(node * dim + c)
                    cols.append(col)
                    data.append(frame[c, a])
                col += 1
    E = sp.csr_matrix((data, (rows, cols)), shape=(n * dim, col))

    constraint_fields = []
    if spec.orthogonality == "rigid":
        constraint_fields = rigid_boundary_basis(grid)
    elif spec.orthogonality in ("killing", "killing-profile"):
        if killing_fields is None:
            raise DimensionError(
                "orthogonality family %r needs a supplied Killing basis"
                % spec.orthogonality)
        for vfield in killing_fields:
            vfield = np.asarray(vfield, dtype=float)
            if vfield.size != grid.n_surf * dim:
                raise DimensionError(
                    "Killing basis member has %d entries; expected %d"
                    % (vfield.size, grid.n_surf * dim))
            ext = np.broadcast_to(vfield.reshape(grid.n_surf, 1, dim),
                                  (grid.n_surf, grid.nt, dim))
            constraint_fields.append(ext.reshape(-1))

    null_basis = None
    if constraint_fields:
        B = np.stack([E.T @ (forms.mass @ f) for f in constraint_fields],
                     axis=-1)
        Q, _ = scipy.linalg.qr(B, mode="full")
        null_basis = Q[:, B.shape[1]:]

    embedding = ConstraintEmbedding(tangency_map=E, null_basis=null_basis)
    reduced = QuadraticFormSet(
        mass=embedding.reduce_form(forms.mass),
        stiffness=embedding.reduce_form(forms.stiffness),
        symgrad=embedding.reduce_form(forms.symgrad),
        trace_plus=embedding.reduce_form(forms.trace_plus),
        trace_minus=embedding.reduce_form(forms.trace_minus),
        mass_scalar=forms.mass_scalar,
        stiffness_scalar=forms.stiffness_scalar,
        trace_plus_scalar=forms.trace_plus_scalar,
        trace_minus_scalar=forms.trace_minus_scalar,
        surface=forms.surface, grid=grid)
    return reduced, embedding


def _highpass_nodes(shape, tail):
    """I minus the tensor low-pass over the given periodic axes sizes; the
    trailing ``tail`` axes (s direction / components) are untouched."""
    L = None
    for n in shape:
        P = sp.csr_matrix(lowpass_projector(n))
        L = P if L is None else sp.kron(L, P)
    if tail > 1:
        L = sp.kron(L, sp.identity(tail))
    return (sp.identity(L.shape[0]) - L).tocsr()


def dealias_penalty(grid: ShellGrid, forms: QuadraticFormSet):
    """Penalty form pushing aliased high-mode content out of Korn pencils.

    Nodal energies of fields with angular Fourier modes above a third of the
    grid size are unreliable (their quadratic quadrature aliases), and the
    symmetric-gradient form can spuriously under-report them.  The penalty
    adds the full (M+K)-energy of each field's high-mode part, which moves
    such artifacts above the physical band while leaving smooth fields
    untouched up to their spectrally small tails.
    """
    P = _highpass_nodes(grid.surface_grid.shape, grid.nt * grid.dim)
    B = forms.mass + forms.stiffness
    H = P.T @ (B @ P)
    return _symmetrize(H)


def surface_dealias_penalty(forms: SurfaceFormSet):
    sgrid = forms.grid
    k = sgrid.n_params
    P = _highpass_nodes(sgrid.shape, k)
    B = forms.mass + forms.stiffness
    return _symmetrize(P.T @ (B @ P))


def dealias_penalty_scalar(grid: ShellGrid, forms: QuadraticFormSet):
    P = _highpass_nodes(grid.surface_grid.shape, grid.nt)
    B = forms.mass_scalar + forms.stiffness_scalar
    return _symmetrize(P.T @ (B @ P))


def build_grid(shell: ShellDomain, resolution) -> ShellGrid:
    return ShellGrid(shell, resolution)


def ambient_gradient(grid: ShellGrid, field):
    """Per-node ambient gradient samples of a full nodal field."""
    values = dof_values(field)
    if isinstance(field, FieldDOFs) and field.reduced:
        raise DimensionError("ambient_gradient needs a full (unreduced) field")
    return grid.gradient(values)
