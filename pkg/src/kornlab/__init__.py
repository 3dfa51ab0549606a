"""Numerical laboratory for Korn-Poincare constants on thin shells."""

__version__ = "0.1.0"

from .geometry import (Hypersurface, ProfileExpr, ShellDomain,
                       ThicknessProfile, constant_profile)
from .discretization import (ConstraintSpec, FieldDOFs, ShellGrid,
                             SurfaceGrid, apply_constraints, assemble_forms,
                             build_grid)
from .killing import (KillingBasis, bochner_check, killing_basis,
                      restrict_profile, rigid_tangent_basis)
from .constructions import (MollifierSpec, extend_killing,
                            inequality_ratios, mollified_rotation,
                            normal_average, sample_field, trivial_extension)
from .spectra import (EigenResult, SweepReport, korn_constant,
                      poincare_constant, smallest_eigenpairs, sweep,
                      trace_constant)

__all__ = [name for name in dir() if not name.startswith("_")]
