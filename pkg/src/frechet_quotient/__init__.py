"""Template estimation by Frechet means in quotient spaces, and its bias."""
from .kernels import BACKEND

__version__ = "0.1.0"
