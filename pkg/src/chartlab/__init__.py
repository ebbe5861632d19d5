"""Channel charting lab: procedural city, ray tracing, MIMO CSI, semi-supervised t-SNE charts."""

from .errors import ChartlabError, ConfigError, DataError, DomainError, GeometryError, NumericalError

__version__ = "0.1.0"

__all__ = [
    "ChartlabError",
    "ConfigError",
    "DataError",
    "DomainError",
    "GeometryError",
    "NumericalError",
]
