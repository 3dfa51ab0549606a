"""Generalized symmetric eigenproblems and h-sweeps.

The optimal constants are realized spectrally: the Korn constant is
lambda_min^{-1/2} of the pencil (symmetric-gradient form, W^{1,2} form) on
the constraint-reduced space; the Poincare constant comes from the first
nonzero Neumann eigenvalue; the trace constant from the largest eigenvalue
of the boundary-mass pencil.  The dense symmetric solver (Cholesky
reduction inside LAPACK) is the reference path; grids are sized to keep
reduced dimensions at desk scale.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .discretization import (ConstraintSpec, QuadraticFormSet, ShellGrid,
                             apply_constraints, assemble_forms, build_grid,
                             dealias_penalty)
from .errors import (ConfigurationError, FormError, SolverError, SweepError)
from .geometry import ShellDomain

ZERO_THRESHOLD_REL = 1e-10
RESIDUAL_TOL = 1e-8


@dataclass
class EigenResult:
    """Smallest eigenpairs of a symmetric pencil plus a derived constant."""

    eigenvalues: np.ndarray
    vectors: np.ndarray | None
    residuals: np.ndarray
    median_eigenvalue: float
    degenerate: bool = False
    constant: float = math.nan
    meta: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "residuals": [float(r) for r in self.residuals],
            "median_eigenvalue": self.median_eigenvalue,
            "degenerate": self.degenerate,
            "constant": self.constant if math.isfinite(self.constant)
            else "infinite",
            "meta": dict(self.meta),
        }


def _dense(F):
    return F.toarray() if sp.issparse(F) else np.asarray(F, dtype=float)


def smallest_eigenpairs(A, B, k=6, tol=RESIDUAL_TOL) -> EigenResult:
    """k smallest eigenpairs of A v = lambda B v (symmetric A, SPD B).

    Dense LAPACK path; eigenvalues are recomputed as Rayleigh quotients of
    the returned vectors, and each pair's relative residual
    |Av - lambda Bv| / |Bv| must come out below ``tol``.
    """
    A = _dense(A)
    B = _dense(B)
    n = A.shape[0]
    k = min(k, n)
    try:
        all_evals = scipy.linalg.eigh(A, B, eigvals_only=True)
        _, vecs = scipy.linalg.eigh(A, B, subset_by_index=[0, k - 1])
    except np.linalg.LinAlgError as exc:
        raise FormError(f"pencil solve failed (B not positive definite?): "
                        f"{exc}") from exc
    evals = np.empty(k)
    residuals = np.empty(k)
    for i in range(k):
        v = vecs[:, i]
        Av = A @ v
        Bv = B @ v
        evals[i] = (v @ Av) / (v @ Bv)
        residuals[i] = np.linalg.norm(Av - evals[i] * Bv) / np.linalg.norm(Bv)
    order = np.argsort(evals)
    evals, vecs, residuals = evals[order], vecs[:, order], residuals[order]
    if np.any(residuals > tol):
        raise SolverError(
            f"eigenpair residuals exceed {tol:.1e}: {residuals.tolist()}")
    if np.any(evals < -1e-10 * max(np.median(all_evals), 1.0)):
        raise SolverError(f"negative eigenvalue beyond tolerance: {evals[0]}")
    return EigenResult(eigenvalues=evals, vectors=vecs, residuals=residuals,
                       median_eigenvalue=float(np.median(all_evals)))


def korn_constant(shell: ShellDomain, resolution, spec: ConstraintSpec,
                  n_pairs=6) -> EigenResult:
    """Optimal Korn constant on the reduced space, or a degeneracy flag.

    For the 'killing' / 'killing-profile' orthogonality families the surface
    Killing basis is computed first on the matching tangential grid.
    """
    from .killing import killing_basis, restrict_profile

    grid = build_grid(shell, resolution)
    forms = assemble_forms(grid)
    killing_fields = None
    basis_dim = None
    if spec.orthogonality in ("killing", "killing-profile"):
        basis = killing_basis(shell.surface, resolution[:-1])
        if spec.orthogonality == "killing-profile":
            basis = restrict_profile(basis, shell.profile)
        killing_fields = basis.ambient_members()
        basis_dim = basis.dim
    penalty = dealias_penalty(grid, forms)
    reduced, embedding = apply_constraints(grid, forms, spec,
                                           killing_fields=killing_fields)
    A = reduced.symgrad + embedding.reduce_form(penalty)
    B = reduced.mass + reduced.stiffness
    result = smallest_eigenpairs(A, B, k=n_pairs)
    lam = result.eigenvalues[0]
    threshold = ZERO_THRESHOLD_REL * result.median_eigenvalue
    if lam < threshold:
        result.degenerate = True
        result.constant = math.inf
    else:
        result.constant = float(lam ** -0.5)
    result.meta = {
        "reduced_dim": embedding.reduced_dim,
        "tangency": spec.tangency,
        "orthogonality": spec.orthogonality,
        "alpha": spec.alpha,
        "zero_threshold": threshold,
    }
    if basis_dim is not None:
        result.meta["killing_basis_dim"] = basis_dim
    return result


def poincare_constant(shell: ShellDomain, resolution, n_pairs=4) -> EigenResult:
    """Best constant in |u - mean|_L2 <= C |grad u|_L2 on the shell.

    Spectrally: the second-smallest eigenvalue of the Neumann pencil
    (scalar stiffness, scalar mass); the constant mode is the deflated
    kernel and must carry an eigenvalue at rounding level.
    """
    from .discretization import dealias_penalty_scalar

    grid = build_grid(shell, resolution)
    forms = assemble_forms(grid)
    A = forms.stiffness_scalar + dealias_penalty_scalar(grid, forms)
    result = smallest_eigenpairs(A, forms.mass_scalar, k=n_pairs)
    lam0, lam1 = result.eigenvalues[0], result.eigenvalues[1]
    if abs(lam0) > 1e-12:
        raise SolverError(
            f"constant mode not resolved: kernel eigenvalue {lam0:.3e}")
    result.constant = float(lam1 ** -0.5)
    result.meta = {"kernel_eigenvalue": float(lam0),
                   "reduced_dim": forms.mass_scalar.shape[0]}
    return result


def trace_constant(shell: ShellDomain, resolution) -> EigenResult:
    """Best constant in the h-weighted boundary trace inequality.

    Largest eigenvalue of (boundary mass, h^{-1} M + h K) over scalar
    fields; the constant is its square root.
    """
    grid = build_grid(shell, resolution)
    forms = assemble_forms(grid)
    h = shell.h
    T = _dense(forms.trace_plus_scalar + forms.trace_minus_scalar)
    B = _dense(forms.mass_scalar / h + h * forms.stiffness_scalar)
    n = T.shape[0]
    try:
        all_evals = scipy.linalg.eigh(T, B, eigvals_only=True)
        _, vecs = scipy.linalg.eigh(T, B, subset_by_index=[n - 1, n - 1])
    except np.linalg.LinAlgError as exc:
        raise FormError(f"trace pencil solve failed: {exc}") from exc
    v = vecs[:, 0]
    lam = (v @ (T @ v)) / (v @ (B @ v))
    residual = np.linalg.norm(T @ v - lam * B @ v) / np.linalg.norm(B @ v)
    if residual > RESIDUAL_TOL:
        raise SolverError(f"trace eigenpair residual {residual:.2e}")
    return EigenResult(eigenvalues=np.array([lam]), vectors=vecs,
                       residuals=np.array([residual]),
                       median_eigenvalue=float(np.median(all_evals)),
                       constant=float(np.sqrt(lam)),
                       meta={"reduced_dim": n})


# ----------------------------------------------------------------------
# sweeps
# ----------------------------------------------------------------------

@dataclass
class SweepReport:
    rows: list
    slope: float | None
    fit_residual: float | None
    reliable: bool
    descriptor: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "slope": self.slope,
            "residual": self.fit_residual,
            "reliable": self.reliable,
            "rows": [dict(r) for r in self.rows],
            "descriptor": dict(self.descriptor),
        }


def fit_loglog(h_values, values):
    """Least-squares slope of log(value) against log(h), with RMS residual."""
    h_values = np.asarray(h_values, dtype=float)
    values = np.asarray(values, dtype=float)
    if h_values.size < 3:
        raise ConfigurationError("an exponent fit needs at least 3 rows")
    if np.any(values <= 0) or np.any(~np.isfinite(values)):
        raise ConfigurationError("exponent fit needs positive finite values")
    x, y = np.log(h_values), np.log(values)
    coeffs = np.polyfit(x, y, 1)
    resid = y - np.polyval(coeffs, x)
    return float(coeffs[0]), float(np.sqrt(np.mean(resid ** 2)))


class SweepCache:
    """Append-only per-h JSON cache under cache_dir/<config-hash>/."""

    def __init__(self, cache_dir, config_hash):
        self.base = Path(cache_dir) / config_hash
        self.base.mkdir(parents=True, exist_ok=True)

    def _path(self, h):
        return self.base / f"{repr(float(h))}.json"

    def get(self, h):
        path = self._path(h)
        if path.exists():
            return json.loads(path.read_text())
        return None

    def put(self, h, row):
        self._path(h).write_text(json.dumps(row, sort_keys=True))


def sweep(run, h_values, descriptor=None, cache: SweepCache | None = None,
          fit_field="value", unreliable_residual=0.05) -> SweepReport:
    """Run a per-h task over an h list and fit the log-log exponent.

    ``run`` maps h to a row dict containing at least ``fit_field``.  Rows
    are cached when a cache is supplied.  A per-h failure raises SweepError
    carrying the rows completed so far (already persisted in the cache).
    """
    h_values = [float(h) for h in h_values]
    rows = []
    for h in h_values:
        row = cache.get(h) if cache is not None else None
        if row is None:
            try:
                row = run(h)
            except Exception as exc:
                raise SweepError(
                    f"sweep task failed at h={h}: {exc}", rows) from exc
            row = dict(row)
            row["h"] = h
            if cache is not None:
                cache.put(h, row)
        rows.append(row)
    finite = [(r["h"], r[fit_field]) for r in rows
              if isinstance(r[fit_field], (int, float))
              and math.isfinite(r[fit_field]) and r[fit_field] > 0]
    slope = residual = None
    reliable = False
    if len(finite) >= 3:
        slope, residual = fit_loglog([p[0] for p in finite],
                                     [p[1] for p in finite])
        reliable = residual <= unreliable_residual
    return SweepReport(rows=rows, slope=slope, fit_residual=residual,
                       reliable=reliable, descriptor=descriptor or {})
