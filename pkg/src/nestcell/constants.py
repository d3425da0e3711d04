"""Physical constants used throughout the package.

All geometry is in millimetres, wavelengths in nanometres, delays in
nanoseconds unless a name says otherwise.
"""

C_M_PER_S = 299_792_458.0          # vacuum speed of light
C_MM_PER_NS = 299.792458           # same, in mm per nanosecond
C_MM_PER_S = C_M_PER_S * 1e3

SILICA_GROUP_INDEX = 1.46          # default group index for fiber comparisons
