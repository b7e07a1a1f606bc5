"""Rhomboidal symmetric-mass four-body problem: regularized periodic orbits,
Floquet stability via quarter-period symmetry reduction, Poincare sections."""

__version__ = "0.1.0"
