# coding=utf-8
"""
Seeded random streams.

All randomness in the package comes from numpy's Philox4x64 counter-based
generator. A stream is addressed by a non-negative integer seed and a path of
non-negative integers; the path becomes the ``spawn_key`` of a
:class:`numpy.random.SeedSequence`, so distinct paths give statistically
independent streams and the same (seed, path) always gives the same draws on
every platform.

>>> stream(7, 0, 3).random() == stream(7, 0, 3).random()
True
>>> stream(7, 0, 3).random() == stream(7, 0, 4).random()
False
"""
from __future__ import absolute_import, division

import numpy

#: Stream roots. Tensor initialisation uses ``(WEIGHTS, tensor_index)``.
WEIGHTS = 0
#: Token sampling, keyed by the absolute position of the sampled token.
SAMPLE = 1
#: Accept/reject and residual draws, keyed by (iteration, draft position).
ACCEPT = 2
#: Synthetic prompts, keyed by prompt index.
WORKLOAD = 3


def stream(seed, *path):
    """
    Return an independent generator for `path` under `seed`.

    :param int seed: non-negative root seed
    :param path: non-negative integers naming the stream
    :rtype: numpy.random.Generator
    """
    if seed < 0 or any(p < 0 for p in path):
        raise ValueError('Seeds and stream paths must be non-negative: %r %r' % (seed, path))
    sequence = numpy.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return numpy.random.Generator(numpy.random.Philox(sequence))


def uniform(seed, *path):
    """
    The first uniform [0, 1) draw of a stream.

    >>> 0.0 <= uniform(1, SAMPLE, 10) < 1.0
    True
    """
    return float(stream(seed, *path).random())
