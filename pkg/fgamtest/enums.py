"""Shared enums for the fgamtest package."""

from enum import Enum


class QuadratureRule(Enum):
    """Quadrature rule used to integrate along each curve."""

    MIDPOINT = "midpoint"
    TRAPEZOID = "trapezoid"


class EstimationMethod(Enum):
    """Likelihood maximized when fitting variance components."""

    REML = "REML"
    ML = "ML"


class Parameterization(Enum):
    """Surface basis construction of a fitted model."""

    PSANOVA = "psanova"
    TENSOR = "tensor"


class ModelKind(Enum):
    """Models that can be fitted from the command line."""

    FLM = "flm"
    FGAMM = "fgamm"
    FGAM_GCV = "fgam-gcv"
    FGAM_REML = "fgam-reml"


class TestMethod(Enum):
    """Hypothesis testing procedures."""

    __test__ = False

    EQUALVC = "equalvc"
    BONFERRONI = "bonferroni"
    BOOTSTRAP = "bootstrap"
    NO_EFFECT = "no-effect"
    LINEAR_IN_T = "linear-in-t"
    KNOWNSIG1 = "knownsig1"


class Scenario(Enum):
    """Data-generating scenarios of the rejection study."""

    CONVEX = "convex"
    MIXED = "mixed"


class ScoreScale(Enum):
    """How the constants 8 / j^2 of the predictor scores are read."""

    SD = "sd"
    VARIANCE = "variance"
