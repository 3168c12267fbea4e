"""Frozen constants from calibration runs.

These are artifact constants, not mathematical ones: each was measured
on the recorded battery (see tests) and inflated by a safety margin, so
reruns on the same grids must stay below them.
"""

# Bound ratio norm_at(r) / sup_h 2**(rh) sup|block_h| for admissible
# shell-supported block families, K = 2, |r| <= 2.  Measured max ~2.1 on
# the random-phase battery at 64^2..256^2.
SYNTHESIS_NORM_CONSTANT = 6.0

# Equivalence constant between block norms computed with K in
# {1.5, 2, 4}: ratios of norm_at(s) on the calibration battery stay
# within [1/C, C].  Measured max ratio ~2.6 at s <= 1.
NORM_EQUIVALENCE_CONSTANT = 6.0

# Meyer-multiplier empirical operator-norm bound at s in (0, 1.5] for
# admissible bounded-coefficient families (measured max ~3.2).
MEYER_NORM_CONSTANT = 8.0

# Shell-profile derivative bound: sup over the grid of
# |finite-difference d^alpha shell_h| * 2**(h * alpha.(1/M)) for
# alpha in {e1, e2}, shells 2..h_max, K = 2 (measured max ~1.9).
SHELL_DERIVATIVE_CONSTANT = 4.0

# Low-frequency cut above which the smoothed symbol of every elliptic
# battery case keeps at least half of the raw ellipticity constant.
SHARP_SPLIT_RHO0 = 32.0
