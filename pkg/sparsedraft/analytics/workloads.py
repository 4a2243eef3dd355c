# coding=utf-8
"""
Synthetic prompt sets.

Random weights give no language structure, so the workloads shape the token stream instead:
uniform noise, a segment repeated until attention concentrates on earlier copies, or a needle
hidden in noise whose opening is repeated at the end of the prompt.
"""
from __future__ import absolute_import, division

import logging
from collections import namedtuple

import numpy

from sparsedraft.utils import ContextOverflowError, InvalidDocException, rng

_LOG = logging.getLogger(__name__)

RANDOM = 'random'
REPEATED_SEGMENTS = 'repeated_segments'
NEEDLE = 'needle'
KINDS = (RANDOM, REPEATED_SEGMENTS, NEEDLE)

_FIELDS = ('kind', 'prompt_len', 'n_prompts', 'seed', 'segment_len', 'repeats', 'needle_len')


class Workload(namedtuple('Workload', _FIELDS)):
    """
    A reproducible set of prompts.

    :param str kind: one of :data:`KINDS`
    :param int prompt_len: tokens per prompt
    :param int n_prompts: number of prompts
    :param int seed: prompt ``i`` draws from stream ``(seed, WORKLOAD, i)``
    :param int segment_len: repeated_segments: length of the repeated segment
    :param int repeats: repeated_segments: copies of the segment (default: enough to fill the prompt)
    :param int needle_len: needle: length of the hidden span

    >>> w = Workload(kind='repeated_segments', prompt_len=12, n_prompts=1, segment_len=4)
    >>> p = w.prompt(0, vocab_size=50)
    >>> p[:4] == p[4:8] == p[8:]
    True
    """
    __slots__ = ()

    def __new__(cls, kind=RANDOM, prompt_len=64, n_prompts=4, seed=0, segment_len=16, repeats=None, needle_len=8):
        self = super(Workload, cls).__new__(cls, kind, int(prompt_len), int(n_prompts), int(seed), int(segment_len),
                                            None if repeats is None else int(repeats), int(needle_len))
        if kind not in KINDS:
            raise InvalidDocException('Unknown workload kind %r, expected one of %r' % (kind, KINDS))
        if self.prompt_len < 1 or self.n_prompts < 1 or self.seed < 0:
            raise InvalidDocException('prompt_len and n_prompts must be positive, seed non-negative')
        if self.segment_len < 1 or self.needle_len < 1 or (self.repeats is not None and self.repeats < 1):
            raise InvalidDocException('segment_len, repeats and needle_len must be positive')
        if kind == NEEDLE and 2 * self.needle_len > self.prompt_len:
            raise InvalidDocException('A needle of %d does not fit twice in a prompt of %d'
                                      % (self.needle_len, self.prompt_len))
        return self

    def check_fits(self, config, max_new_tokens, gamma=0):
        """
        Raise :class:`ContextOverflowError` unless prompts leave room for generation.

        :type config: sparsedraft.model.ModelConfig
        """
        needed = self.prompt_len + max_new_tokens + gamma
        if needed > config.max_context:
            raise ContextOverflowError('Prompts of %d plus %d new tokens and gamma %d exceed max_context %d'
                                       % (self.prompt_len, max_new_tokens, gamma, config.max_context))

    def prompt(self, index, vocab_size):
        """
        :param int index: prompt number, below ``n_prompts``
        :rtype: list[int]
        """
        if not 0 <= index < self.n_prompts:
            raise IndexError('Prompt %d of %d' % (index, self.n_prompts))
        draws = rng.stream(self.seed, rng.WORKLOAD, index)
        if self.kind == RANDOM:
            tokens = draws.integers(0, vocab_size, self.prompt_len)
        elif self.kind == REPEATED_SEGMENTS:
            tokens = _repeated(draws, vocab_size, self.prompt_len, self.segment_len, self.repeats)
        else:
            tokens = _needle(draws, vocab_size, self.prompt_len, self.needle_len)
        return [int(t) for t in tokens]

    def prompts(self, vocab_size):
        return [self.prompt(i, vocab_size) for i in range(self.n_prompts)]

    @classmethod
    def from_doc(cls, doc):
        return cls(**doc)

    def to_doc(self):
        return dict(self._asdict())


def _repeated(draws, vocab_size, prompt_len, segment_len, repeats):
    segment = draws.integers(0, vocab_size, segment_len)
    if repeats is None:
        repeats = -(-prompt_len // segment_len)
    body = numpy.tile(segment, repeats)
    if len(body) >= prompt_len:
        return body[:prompt_len]
    filler = draws.integers(0, vocab_size, prompt_len - len(body))
    return numpy.concatenate([filler, body])


def _needle(draws, vocab_size, prompt_len, needle_len):
    haystack = draws.integers(0, vocab_size, prompt_len)
    needle = draws.integers(0, vocab_size, needle_len)
    cue = max(needle_len // 2, 1)
    at = int(draws.integers(0, prompt_len - needle_len - cue + 1))
    haystack[at:at + needle_len] = needle
    haystack[prompt_len - cue:] = needle[:cue]
    return haystack
