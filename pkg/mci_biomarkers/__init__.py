"""MCI biomarkers - MEG/MRI feature pipelines with nested Monte-Carlo cross-validation."""

__version__ = "0.3.0"
__license__ = "MIT"
