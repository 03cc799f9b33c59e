"""Skeleton-conditioned deformable radiance fields.

Creates, optimizes, animates and composes articulated 3D avatars. The avatar
lives in a canonical-space feature field; an articulated body model supplies
skinning transforms for posing, skeleton maps for view-aligned guidance, and
silhouettes for initialization.
"""

__version__ = "0.1.0"
