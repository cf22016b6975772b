"""Unit conversion helpers.

All internal state is SI (m, s, m/s, m/s^2). Config files and a few bound
presets use mph for speeds, converted on load.
"""

MPH_TO_MPS = 0.44704  # exact by definition (1609.344 m per mile)


def mph_to_mps(v_mph: float) -> float:
    return v_mph * MPH_TO_MPS


def mps_to_mph(v_mps: float) -> float:
    return v_mps / MPH_TO_MPS
