"""Koopman surrogate eNMPC training toolkit."""

from ._core import (
    ControlInput,
    CstrEnv,
    KoopmanModel,
    MpcPolicy,
    PlantState,
    PriceSeries,
    cosine_similarity,
    evaluate,
    generate_dataset,
    load_prices,
    synth_prices,
    train_si,
)

__all__ = [
    "ControlInput",
    "CstrEnv",
    "KoopmanModel",
    "MpcPolicy",
    "PlantState",
    "PriceSeries",
    "cosine_similarity",
    "evaluate",
    "generate_dataset",
    "load_prices",
    "synth_prices",
    "train_si",
]
