"""High-frequency depth recovery from shading at desk scale."""

__version__ = "0.1.0"

from . import core, evaluation, raster, sparsedepth, synth, training, unet

__all__ = ["core", "synth", "raster", "sparsedepth", "unet", "training",
           "evaluation", "__version__"]
