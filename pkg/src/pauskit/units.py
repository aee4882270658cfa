"""Unit conventions: geometry in mm, optical coefficients in cm^-1.

Every mm<->cm conversion in the package goes through these two helpers so a
stray factor of ten cannot hide in module-local arithmetic.
"""

MM_PER_CM = 10.0


def mm_to_cm(value_mm):
    """Convert a length (scalar or array) from mm to cm."""
    return value_mm / MM_PER_CM


def cm_to_mm(value_cm):
    """Convert a length (scalar or array) from cm to mm."""
    return value_cm * MM_PER_CM
