"""
Forward rendering: projection of 3D Gaussians and tiled alpha compositing.
"""

from .projection import (
    Projected2DGaussian,
    ProjectedGaussians,
    median_scene_depth,
    project,
    visible_depths,
)
from .rasterizer import (
    ALPHA_MAX,
    TILE_SIZE,
    TRANSMITTANCE_MIN,
    Contributions,
    RenderOutput,
    Tile,
    bin_splats,
    make_tiles,
    rasterize,
    render,
    render_naive,
    tile_forward,
)

__all__ = [
    # Projection
    "Projected2DGaussian",
    "ProjectedGaussians",
    "project",
    "visible_depths",
    "median_scene_depth",
    # Rasterization
    "ALPHA_MAX",
    "TILE_SIZE",
    "TRANSMITTANCE_MIN",
    "Contributions",
    "RenderOutput",
    "Tile",
    "make_tiles",
    "bin_splats",
    "tile_forward",
    "rasterize",
    "render",
    "render_naive",
]
