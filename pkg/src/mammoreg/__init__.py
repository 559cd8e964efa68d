"""2D Demons and B-spline deformable registration for mammograms, with a
synthetic ground-truth benchmark and similarity metrics."""

from .image import DisplacementField, Image, Mask

__all__ = ["DisplacementField", "Image", "Mask"]
__version__ = "0.1.0"
