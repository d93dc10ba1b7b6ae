"""Numerical tolerances shared across the package.

Every threshold used by a check or a property test lives here so that the
tests can pin the exact values.
"""

# symmetry check for input matrices, relative to 1 + max|M|
SYMMETRY_TOL = 1e-12
# orthonormality of bases, max-norm of U^T U - I
ORTHO_TOL = 1e-10
# PSD test: smallest eigenvalue may dip to -PSD_TOL * (1 + |sigma_1|)
PSD_TOL = 1e-9
# relative eigenvalue floor when inverting the (L-perp, L-perp) block
SCHUR_FLOOR_REL = 1e-12
# PD inputs whose condition number stays below 1/SCHUR_DIRECT_COND take the inverse-based Schur path
SCHUR_DIRECT_COND = 1e-10
# two eigenvalues closer than this (relative to sigma_1) are treated as tied
DEGENERATE_GAP_REL = 1e-12
# relative size below which a spectral quantity counts as exactly zero
ZERO_REL = 1e-14
# a point lies in a subspace if its orthogonal residual is below this
MEMBERSHIP_TOL = 1e-10

# estimator defaults
DEFAULT_RIDGE_REL = 1e-12
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10_000
# inlier TME counts as failed when sigma_d / sigma_1 falls below this
INLIER_TME_MIN_COND = 1e-10

# experiment harness
RECOVERY_THRESHOLD = 1e-6
RATE_WINDOW = (1e-10, 1e-2)
# kappa_1-hat growth is only checked while sigma_1(Sigma_PP) / ||Sigma|| stays above this
SATURATION_REL = 1e-9

# C_E estimate below this is reported as degenerate support
C_E_DEGENERATE = 1e-12
