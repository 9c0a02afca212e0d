"""Biosensor-to-image transforms and training utilities (C++ extension)."""

from ._pulsemap import (
    ConfigError,
    DataError,
    Error,
    NumericsError,
    ParseError,
    compute_metrics,
    cwt_scalogram,
    kfold_split,
    lr_schedule,
    normalize_personal,
    plan_mask,
    pretrain_loss,
    render_image,
    run_command,
    spwvd_map,
    toeplitz_map,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "NumericsError",
    "ParseError",
    "compute_metrics",
    "cwt_scalogram",
    "kfold_split",
    "lr_schedule",
    "normalize_personal",
    "plan_mask",
    "pretrain_loss",
    "render_image",
    "run_command",
    "spwvd_map",
    "toeplitz_map",
]
