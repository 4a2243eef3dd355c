# coding=utf-8
"""
Token distributions, seeded sampling and the accept/reject kernel of speculative verification.

Every function here is pure: randomness comes in as uniform draws, so callers decide which
seeded stream feeds which decision.
"""
from __future__ import absolute_import, division

from collections import namedtuple

import numpy

from sparsedraft.attention import softmax_stable

GREEDY = 'greedy'
SAMPLE = 'sample'


class DecodeMode(namedtuple('DecodeMode', ('name', 'temperature'))):
    """
    Greedy decoding, or sampling at a positive temperature.

    Greedy decisions are argmaxes, but distributions are still reported at temperature 1 so
    acceptance probabilities stay meaningful.

    >>> DecodeMode.greedy().is_greedy
    True
    >>> DecodeMode.sample(0.7)
    DecodeMode(name='sample', temperature=0.7)
    """
    __slots__ = ()

    def __new__(cls, name=GREEDY, temperature=1.0):
        if name not in (GREEDY, SAMPLE):
            raise ValueError('Unknown decode mode %r' % name)
        temperature = float(temperature)
        if not temperature > 0:
            raise ValueError('temperature must be positive, got %r' % temperature)
        return super(DecodeMode, cls).__new__(cls, name, temperature)

    @classmethod
    def greedy(cls):
        return cls(GREEDY, 1.0)

    @classmethod
    def sample(cls, temperature=1.0):
        return cls(SAMPLE, temperature)

    @property
    def is_greedy(self):
        return self.name == GREEDY

    def distribution(self, logits):
        """
        Vocabulary probabilities in float64 for one row of logits.
        """
        logits = numpy.asarray(logits, dtype=numpy.float64)
        if self.is_greedy:
            return softmax_stable(logits)
        return softmax_stable(logits / self.temperature)

    def to_doc(self):
        return {'name': self.name, 'temperature': self.temperature}

    @classmethod
    def from_doc(cls, doc):
        return cls(doc.get('name', GREEDY), doc.get('temperature', 1.0))


def argmax_token(probs):
    """
    Most likely token, ties to the lower id.

    >>> argmax_token([0.25, 0.5, 0.25])
    1
    >>> argmax_token([0.5, 0.5])
    0
    """
    return int(numpy.argmax(numpy.asarray(probs)))


def sample_token(probs, u):
    """
    Inverse-CDF sample: the first token whose cumulative mass exceeds ``u`` times the total.

    >>> sample_token([0.5, 0.5], 0.25), sample_token([0.5, 0.5], 0.75)
    (0, 1)
    >>> sample_token([0.0, 1.0, 0.0], 0.999999)
    1
    """
    probs = numpy.asarray(probs, dtype=numpy.float64)
    if not 0.0 <= u < 1.0:
        raise ValueError('Uniform draw %r outside [0, 1)' % u)
    cdf = numpy.cumsum(probs)
    index = int(numpy.searchsorted(cdf, u * cdf[-1], side='right'))
    if index >= len(probs) or probs[index] <= 0:
        index = int(numpy.flatnonzero(probs > 0)[-1])
    return index


def choose_token(probs, mode, u):
    """Argmax in greedy mode, otherwise :func:`sample_token` with draw `u`."""
    if mode.is_greedy:
        return argmax_token(probs)
    return sample_token(probs, u)


def residual_distribution(p, q):
    """
    normalize(max(0, p - q)): where a rejected draft's replacement is drawn from.

    Falls back to `p` itself if rounding leaves no positive mass.

    >>> residual_distribution([0.5, 0.5], [1.0, 0.0]).tolist()
    [0.0, 1.0]
    >>> residual_distribution([0.7, 0.3], [0.3, 0.7]).tolist()
    [1.0, 0.0]
    """
    p = numpy.asarray(p, dtype=numpy.float64)
    q = numpy.asarray(q, dtype=numpy.float64)
    if p.shape != q.shape:
        raise ValueError('Distributions of different sizes: %s and %s' % (p.shape, q.shape))
    if numpy.array_equal(p, q):
        raise ValueError('Identical distributions never reject; no residual exists')
    residual = numpy.maximum(p - q, 0.0)
    total = residual.sum()
    if not total > 0:
        return p / p.sum()
    return residual / total


def accept_probability(p, q, token):
    """
    min(1, p(x) / q(x)) for a drafted token x.

    >>> accept_probability([0.5, 0.5], [1.0, 0.0], 0)
    0.5
    """
    q_x = float(q[token])
    if q_x <= 0:
        raise ValueError('Drafted token %d has zero draft probability' % token)
    return min(1.0, float(p[token]) / q_x)


#: Result of judging one chain of drafts.
AcceptResult = namedtuple('AcceptResult', ('accepted_count', 'emitted_tokens', 'accept_probs',
                                           'rejected_accept_prob'))


def accept_drafts(draft_tokens, q_dists, p_dists, mode, draws, bonus_u, accept_all=False):
    """
    Modified rejection sampling over a chain of drafts.

    Draft ``x_t`` is accepted when ``u_t < min(1, p_t(x_t)/q_t(x_t))`` (greedy: when it is the
    argmax of ``p_t``). The first rejection emits a token from the residual of ``p_t`` and ``q_t``
    (greedy: the argmax of ``p_t``) and ends the chain; if every draft survives, a bonus token is
    drawn from ``p_(gamma+1)``.

    :param list[int] draft_tokens: x_1..x_gamma
    :param q_dists: gamma draft distributions
    :param p_dists: gamma + 1 target distributions
    :type mode: DecodeMode
    :param draws: callable ``t -> (u_accept, u_residual)`` for 0-based draft index t
    :param float bonus_u: uniform draw for the bonus token
    :param bool accept_all: accept every draft unconditionally; breaks losslessness, for fault drills
    :rtype: AcceptResult
    """
    gamma = len(draft_tokens)
    if len(q_dists) != gamma or len(p_dists) != gamma + 1:
        raise ValueError('Need %d draft and %d target distributions, got %d and %d'
                         % (gamma, gamma + 1, len(q_dists), len(p_dists)))
    accept_probs = []
    for t, token in enumerate(draft_tokens):
        p, q = p_dists[t], q_dists[t]
        prob = accept_probability(p, q, token)
        accept_probs.append(prob)
        if accept_all:
            continue
        if mode.is_greedy:
            if token == argmax_token(p):
                continue
            corrected = argmax_token(p)
        else:
            u_accept, u_residual = draws(t)
            if u_accept < prob:
                continue
            corrected = sample_token(residual_distribution(p, q), u_residual)
        return AcceptResult(t, list(draft_tokens[:t]) + [corrected], accept_probs, prob)

    bonus = choose_token(p_dists[gamma], mode, bonus_u)
    return AcceptResult(gamma, list(draft_tokens) + [bonus], accept_probs, None)
