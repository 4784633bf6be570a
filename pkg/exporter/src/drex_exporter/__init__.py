"""Frozen-backbone feature exporter producing DRXF v1 files."""

from .export import ExportJob, ExportSummary, extract_features

__version__ = "0.1.0"

__all__ = ["ExportJob", "ExportSummary", "extract_features", "__version__"]
