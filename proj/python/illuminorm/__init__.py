"""Illumination-invariant autoencoders with nearest-neighbour retrieval."""

from ._illuminorm import (
    ConfigError,
    ContractError,
    DataError,
    LatentIndex,
    Model,
    NumericError,
    SamplingError,
    evaluate,
    generate_dataset,
    load_split,
    recon_distance_with_gradient,
    ssim,
    train,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "LatentIndex",
    "Model",
    "NumericError",
    "SamplingError",
    "evaluate",
    "generate_dataset",
    "load_split",
    "recon_distance_with_gradient",
    "ssim",
    "train",
]
