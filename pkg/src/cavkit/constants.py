"""Physical constants used across the toolkit (SI units)."""

C_LIGHT = 299_792_458.0  # speed of light [m/s]
