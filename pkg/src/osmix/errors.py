"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so estimator code should raise
the most specific class that applies rather than bare ValueError.
"""

from __future__ import annotations


class OsmixError(Exception):
    """Base class for all package errors."""


class ConfigError(OsmixError):
    """Invalid run configuration or inconsistent options (exit code 2)."""


class DataError(OsmixError):
    """Malformed or insufficient input data (exit code 3)."""


class DegenerateGridError(DataError):
    """Too few distinct sample values to build the requested quantile grid."""


class IdentificationError(OsmixError):
    """A maintained identifying assumption fails on the inputs (exit code 4)."""


class RelevanceError(IdentificationError):
    """Instrument eigenvalues are complex or not distinct enough."""


class RankDeficiencyError(IdentificationError):
    """A cell-probability matrix is too ill-conditioned to invert."""


class AmbiguityError(IdentificationError):
    """Several solutions pass validation; the model cannot pick one."""


class UniquenessError(IdentificationError):
    """Multistart optimization found disagreeing near-optimal solutions."""


class LabelingError(IdentificationError):
    """The state-labeling statistic is tied across states."""


class NonUniqueWeightsError(IdentificationError):
    """Component CDFs are collinear; the weight fit is not unique."""


class NumericError(OsmixError):
    """Numerical failure: quadrature, degenerate density, misfit (exit code 5)."""


class DegenerateDensityError(NumericError):
    """A density is zero where a positive value is required."""


class EstimationError(NumericError):
    """A nonparametric estimate collapsed below usable resolution."""


class MisfitError(NumericError):
    """Best optimizer residual exceeds the configured tolerance."""


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_IDENTIFICATION = 4
EXIT_NUMERIC = 5


def exit_code_for(exc: BaseException) -> int:
    """Exit code the CLI should use for *exc*."""
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, IdentificationError):
        return EXIT_IDENTIFICATION
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return 1
