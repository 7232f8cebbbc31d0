"""
Synthetic scene generation and floater injection.
"""

from .floaters import FloaterSpec, inject_floaters, sample_floaters, surface_front
from .generator import (
    SceneSpec,
    SceneTemplate,
    align_z_quats,
    generate,
    make_rigs,
    min_angular_separation,
    render_ground_truth,
    surface_gaussians,
)

__all__ = [
    # Scenes
    "SceneSpec",
    "SceneTemplate",
    "generate",
    "surface_gaussians",
    "align_z_quats",
    "make_rigs",
    "min_angular_separation",
    "render_ground_truth",
    # Floaters
    "FloaterSpec",
    "inject_floaters",
    "sample_floaters",
    "surface_front",
]
