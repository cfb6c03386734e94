"""Masked time-series pretraining with a spectral-domain decoder."""

from .cbd import CbdBlock, CbdStack, FrequencyDecoder
from .cim import CIM
from .config import RunConfig, load_config
from .model import ModelConfig, SpecMTM
from .ser import SER
from .spectral import Spectrum, dft_forward, dft_inverse

__all__ = [
    "CIM",
    "SER",
    "CbdBlock",
    "CbdStack",
    "FrequencyDecoder",
    "ModelConfig",
    "RunConfig",
    "SpecMTM",
    "Spectrum",
    "dft_forward",
    "dft_inverse",
    "load_config",
]

__version__ = "0.1.0"
