"""Transparency-aware latent diffusion and multi-layer scene composition."""

from .errors import ConfigurationError, ContractError, LayerforgeError

__all__ = ["ConfigurationError", "ContractError", "LayerforgeError"]
__version__ = "0.1.0"
