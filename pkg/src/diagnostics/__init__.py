"""
Floater decomposition diagnostics.
"""

from .decomposition import (
    FloaterDecomposition,
    dark_channel_approx_error,
    decompose,
    haze_approx_error,
)

__all__ = [
    "FloaterDecomposition",
    "decompose",
    "haze_approx_error",
    "dark_channel_approx_error",
]
