"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MsgenError(Exception):
    """Base class for all package errors."""


class ChemError(MsgenError, ValueError):
    pass


class UnknownElement(ChemError):
    pass


class MalformedFormula(ChemError):
    pass


class ParseError(ChemError):
    pass


class UnsupportedFeature(ChemError):
    pass


class InvalidGraph(ChemError):
    pass


class WidthMismatch(MsgenError, ValueError):
    pass


class ShapeMismatch(MsgenError, ValueError):
    pass


class EmptyCorpus(MsgenError, ValueError):
    pass


class DegeneratePosterior(MsgenError, ArithmeticError):
    pass


class NonFiniteError(MsgenError, ArithmeticError):
    """Raised when activations, gradients or updates stop being finite."""


class NonFiniteActivation(NonFiniteError):
    pass


class NonFiniteGradient(NonFiniteError):
    pass


class NonFiniteUpdate(NonFiniteError):
    pass


class NegativeLoss(ChemError):
    """A peak formula is not contained in the precursor formula."""


class DataError(MsgenError):
    """Problems with input files: missing ids, empty datasets, bad records."""


class EmptyAfterExclusion(DataError):
    pass


class MissingTruth(DataError):
    pass


class ConfigError(MsgenError):
    pass
