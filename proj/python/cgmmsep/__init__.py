"""Multichannel blind source separation with a complex Gaussian mixture model."""

from ._core import (
    Config,
    Error,
    gradcheck,
    infer_mono,
    istft,
    permutation_align,
    separate,
    si_sdr,
    simulate,
    stft,
)

__all__ = [
    "Config",
    "Error",
    "gradcheck",
    "infer_mono",
    "istft",
    "permutation_align",
    "separate",
    "si_sdr",
    "simulate",
    "stft",
]
