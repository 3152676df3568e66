"""Single-view shape reconstruction through a learned SDF latent space.

Shapes are encoded by an auto-decoder; images are described by clustered
patch descriptors plus a global embedding, and a small dense net maps those
features straight to latent codes.  Everything runs on numpy, with optional
compiled kernels for marching cubes, assignment and nearest-neighbour search.
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
