"""Quasi-periodic solutions of the discrete nonlinear Schrodinger equation."""

from ._core import Model, QpdnlsError, check_nonresonance, decay_exponent

__all__ = ["Model", "QpdnlsError", "check_nonresonance", "decay_exponent"]
