"""Gauge-invariant dressing of lattice Dirac spinor fields."""
