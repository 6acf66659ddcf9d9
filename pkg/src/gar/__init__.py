"""High-dimensional conditional-quantile forecasting and growth-at-risk analysis."""

__version__ = "0.1.0"

from .dataset import PanelData, RollingWindowPlan, build_panel, load_fredmd_csv, windows  # noqa: E402
from .model import QuantileModel  # noqa: E402
from .qpcr import QpcrConfig, fit_qpcr  # noqa: E402
from .qr_core import fit_qr, weighted_quantile  # noqa: E402

__all__ = [
    "PanelData",
    "QpcrConfig",
    "QuantileModel",
    "RollingWindowPlan",
    "build_panel",
    "fit_qpcr",
    "fit_qr",
    "load_fredmd_csv",
    "weighted_quantile",
    "windows",
]
