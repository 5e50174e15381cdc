"""Multi-projection saliency toolkit for 360-degree equirectangular images."""

__version__ = "0.1.0"
