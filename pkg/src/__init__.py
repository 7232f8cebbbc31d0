"""
splatcal - Gaussian splatting on the CPU with reliability calibration.

A differentiable tile rasterizer and Adam trainer for 3D Gaussian scenes, with
continuous depth-guided dropout during training and dark-channel-guided
pruning of low-opacity floaters.
"""

__version__ = "0.1.0"
