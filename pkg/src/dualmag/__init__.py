"""Simulation library for a dual-coupling optomechanical magnetometer.

Modules: ``params`` (inputs and derived quantities), ``fock`` (truncated Fock
space linear algebra), ``analytic`` (closed-form dynamics), ``fisher``
(Fisher information and homodyne statistics), ``lindblad`` (dissipative
evolution), ``spectra`` (classical noise model) and ``cli`` (scenario runner).
"""
__version__ = "0.1.0"
