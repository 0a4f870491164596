from . import commands, config, dataset, imageio

__all__ = ["commands", "config", "dataset", "imageio"]
