"""Small constructors shared by the tests."""
import numpy as np

from mskqc.core import BinaryMask, IntensityVolume, LabelVolume, VolumeGeometry


def make_mask(arr, spacing=(1.0, 1.0, 1.0)):
    arr = np.asarray(arr, dtype=bool)
    return BinaryMask(VolumeGeometry(arr.shape, spacing), arr)


def make_img(arr, spacing=(1.0, 1.0, 1.0)):
    arr = np.asarray(arr)
    return IntensityVolume(VolumeGeometry(arr.shape, spacing), arr)


def make_labels(arr, spacing=(1.0, 1.0, 1.0)):
    arr = np.asarray(arr)
    return LabelVolume(VolumeGeometry(arr.shape, spacing), arr)


def sphere(shape, center, radius):
    idx = np.indices(shape, dtype=np.float64)
    d2 = sum((idx[i] - center[i]) ** 2 for i in range(3))
    return d2 <= radius * radius
