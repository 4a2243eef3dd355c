# coding=utf-8
"""
Binary weight files.

Layout, all integers little-endian::

    8 bytes   magic b'SPECATTN'
    4 bytes   format version (uint32)
    4 bytes   length N of the config JSON (uint32)
    N bytes   ModelConfig document, UTF-8 JSON
    ...       every tensor as little-endian float32, C order, in tensor_layout() order
    4 bytes   CRC-32 of the tensor bytes (uint32)
"""
from __future__ import absolute_import

import json
import logging
import struct
import zlib
from pathlib import Path

import numpy

from sparsedraft.model import ModelConfig, Weights, tensor_layout
from sparsedraft.storage.exceptions import (WeightsFileError, WeightsHeaderError, WeightsTruncatedError,
                                            WeightsChecksumError)
from sparsedraft.utils import InvalidDocException

_LOG = logging.getLogger(__name__)

MAGIC = b'SPECATTN'
FORMAT_VERSION = 1
_UINT32 = struct.Struct('<I')
_TENSOR_DTYPE = numpy.dtype('<f4')


def save_weights(path, config, weights):
    """
    :type path: str | pathlib.Path
    :type config: ModelConfig
    :type weights: Weights
    """
    if weights.config != config:
        raise ValueError('Weights were built for a different config')
    config_bytes = json.dumps(config.to_doc(), sort_keys=True).encode('utf-8')
    tensor_bytes = b''.join(numpy.ascontiguousarray(tensor, dtype=_TENSOR_DTYPE).tobytes()
                            for _, tensor in weights.tensors())
    with Path(path).open('wb') as f:
        f.write(MAGIC)
        f.write(_UINT32.pack(FORMAT_VERSION))
        f.write(_UINT32.pack(len(config_bytes)))
        f.write(config_bytes)
        f.write(tensor_bytes)
        f.write(_UINT32.pack(zlib.crc32(tensor_bytes) & 0xffffffff))
    _LOG.info('Wrote %d tensor bytes to %s', len(tensor_bytes), path)


def _read_header(data, path):
    fixed = len(MAGIC) + 2 * _UINT32.size
    if len(data) < fixed or data[:len(MAGIC)] != MAGIC:
        raise WeightsHeaderError('%s is not a weight file (bad magic)' % path)
    version, = _UINT32.unpack_from(data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise WeightsHeaderError('%s has unsupported format version %d' % (path, version))
    config_len, = _UINT32.unpack_from(data, len(MAGIC) + _UINT32.size)
    if len(data) < fixed + config_len:
        raise WeightsHeaderError('%s: config document cut short' % path)
    try:
        config = ModelConfig.from_doc(json.loads(data[fixed:fixed + config_len].decode('utf-8')))
    except (ValueError, InvalidDocException) as e:
        raise WeightsHeaderError('%s: malformed config document: %s' % (path, e))
    return config, fixed + config_len


def load_weights(path):
    """
    :type path: str | pathlib.Path
    :rtype: (ModelConfig, Weights)
    """
    data = Path(path).read_bytes()
    config, offset = _read_header(data, path)

    layout = tensor_layout(config)
    expected = sum(int(numpy.prod(shape)) for _, shape in layout) * _TENSOR_DTYPE.itemsize
    available = len(data) - offset
    if available < expected + _UINT32.size:
        raise WeightsTruncatedError('%s: expected %d tensor bytes plus checksum, found %d bytes'
                                    % (path, expected, available))
    if available > expected + _UINT32.size:
        raise WeightsFileError('%s: %d unexpected trailing bytes' % (path, available - expected - _UINT32.size))

    tensor_bytes = data[offset:offset + expected]
    stored, = _UINT32.unpack_from(data, offset + expected)
    actual = zlib.crc32(tensor_bytes) & 0xffffffff
    if stored != actual:
        raise WeightsChecksumError('%s: checksum %08x does not match tensor data %08x' % (path, stored, actual))

    tensors = []
    cursor = 0
    for _, shape in layout:
        count = int(numpy.prod(shape))
        flat = numpy.frombuffer(tensor_bytes, dtype=_TENSOR_DTYPE, count=count, offset=cursor)
        tensors.append(flat.astype(numpy.float32).reshape(shape))
        cursor += count * _TENSOR_DTYPE.itemsize
    return config, Weights.from_tensors(config, tensors)
