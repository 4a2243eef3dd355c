from __future__ import absolute_import

from sparsedraft.utils import SparseDraftException


class WeightsFileError(SparseDraftException):
    pass


class WeightsHeaderError(WeightsFileError):
    pass


class WeightsTruncatedError(WeightsFileError):
    pass


class WeightsChecksumError(WeightsFileError):
    pass
