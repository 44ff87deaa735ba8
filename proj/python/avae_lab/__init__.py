"""Autoencoding VAE lab: Python access to the C++ core."""

from ._core import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    FormatError,
    NumericError,
    PpcaModel,
    bimodal_histogram,
    coupling_cross_expect,
    default_config,
    diagonal_mass,
    discrete_demo,
    evaluate,
    kl_to_standard,
    load_checkpoint_config,
    load_config,
    load_idx,
    ppca_identity_residuals,
    tabular_exact_loss,
    tabular_heatmaps,
    tabular_init,
    tabular_tables,
    tabular_train,
    train,
    w2_distance,
)

__all__ = [name for name in dir() if not name.startswith("_")]
