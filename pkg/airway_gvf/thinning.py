"""
Topology-preserving 3-D thinning.
"""

from skimage.morphology import skeletonize

from airway_gvf.volume import BinaryMask


def thin_3d(m: BinaryMask) -> BinaryMask:
    """
    Reduce a mask to a one-voxel-thick skeleton.

    Directional border peeling with simple-point tests (Lee's method as
    implemented by scikit-image): 26-connectivity of the foreground and
    6-connectivity of the background are preserved, and the result is a
    subset of ``m``.
    """
    if m.count == 0:
        return m.with_values(m.values.copy())
    skeleton = skeletonize(m.values, method="lee") > 0
    return m.with_values(skeleton & m.values)
