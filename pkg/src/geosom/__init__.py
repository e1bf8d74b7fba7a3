"""Geodemographic clustering: census features, kernel PCA, SOM, validity indices."""

__version__ = "0.1.0"

from geosom.errors import (
    DataError,
    DegenerateClusteringError,
    GeosomError,
    NumericalError,
    ValidationError,
)

__all__ = [
    "__version__",
    "DataError",
    "DegenerateClusteringError",
    "GeosomError",
    "NumericalError",
    "ValidationError",
]
