"""Local feature learning on depth images.

The package trains a small convolutional network that turns a single-channel
depth image into dense descriptors and keypoint scores, supervised by
ground-truth pixel correspondences recovered from camera geometry, with an
auxiliary head that predicts how the depth map looks from a second viewpoint.
It also ships the surrounding tooling: a synthetic depth renderer, dataset
loaders, keypoint matching and evaluation, and RANSAC camera localization.
"""

__version__ = "0.1.0"
