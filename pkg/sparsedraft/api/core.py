# coding=utf-8
"""
The self-speculative decoding loop.

One model plays both roles: drafting runs it with sparse attention over a selected subset of the
committed KV, verification runs it with full attention over all of it. Verification also collects
the attention logits that choose the next iteration's subset.

Each iteration:

1. forwards the last emitted token ``y`` and ``gamma - 1`` drafts one at a time under sparse
   attention, sampling ``x_1..x_gamma`` from the draft distributions ``q``;
2. drops the draft KV, forwards ``[y, x_1..x_gamma]`` jointly under full attention, and judges the
   drafts against the target distributions ``p``;
3. keeps the KV of the verified tokens, commits, and refreshes the selection.
"""
from __future__ import absolute_import, division

import logging
from collections import namedtuple

import numpy

from sparsedraft.attention import AttendSpec, CollectSpec, LogitMatrix, TrafficMeter, FULL
from sparsedraft.model.transformer import forward
from sparsedraft.selection import (SelectorConfig, QUEST, WINDOW, select_from_logits, select_window,
                                   quest_selector, set_overlap)
from sparsedraft.storage.kv_store import KvStore
from sparsedraft.utils import ContextOverflowError, rng
from .sampling import DecodeMode, accept_drafts, choose_token

_LOG = logging.getLogger(__name__)

#: Bytes per collected logit when dumped for selection (16-bit).
LOGIT_DUMP_BYTES = 2


class DecodeParams(namedtuple('DecodeParams', ('gamma', 'selector', 'mode', 'seed', 'max_new_tokens',
                                               'eos_token'))):
    """
    :param int gamma: drafts per iteration, at least 1
    :type selector: SelectorConfig
    :type mode: DecodeMode
    :param int seed: root of every random stream
    :param int max_new_tokens: tokens to emit
    :param int eos_token: stop after emitting this token, if set
    """
    __slots__ = ()

    def __new__(cls, gamma=4, selector=None, mode=None, seed=0, max_new_tokens=64, eos_token=None):
        self = super(DecodeParams, cls).__new__(cls, int(gamma), selector or SelectorConfig(),
                                                mode or DecodeMode.greedy(), int(seed), int(max_new_tokens),
                                                None if eos_token is None else int(eos_token))
        if self.gamma < 1:
            raise ValueError('gamma must be at least 1, got %d' % self.gamma)
        if self.seed < 0:
            raise ValueError('seed must be non-negative, got %d' % self.seed)
        if self.max_new_tokens < 1:
            raise ValueError('max_new_tokens must be at least 1, got %d' % self.max_new_tokens)
        return self

    def to_doc(self):
        doc = dict(self._asdict())
        doc['selector'] = self.selector.to_doc()
        doc['mode'] = self.mode.to_doc()
        return doc


#: Drafts of one iteration and the distributions they were drawn from.
DraftState = namedtuple('DraftState', ('y', 'window_start', 'draft_tokens', 'q_dists'))

#: What verification decided.
VerifyOutcome = namedtuple('VerifyOutcome', ('accepted_count', 'emitted_tokens', 'p_dists', 'accept_probs',
                                             'rejected_accept_prob', 'collected'))

_STATS_FIELDS = ('iteration', 'accepted', 'gamma', 'accept_flags', 'accept_probs', 'rejected_accept_prob',
                 'prefix_len', 'emitted_tokens', 'draft_tokens', 'draft_kv_bytes', 'draft_meta_bytes',
                 'verify_kv_bytes', 'collected_bytes', 'selection_retention', 'selector')


class IterationStats(namedtuple('IterationStats', _STATS_FIELDS)):
    """
    Everything recorded about one draft-and-verify iteration. Serialises to a flat document so
    summaries can be recomputed from a stats stream.

    ``prefix_len`` is the draft window start (the position of ``y``); ``selection_retention`` is the
    mean over dense layers of the overlap between the previous and the refreshed selection.
    """
    __slots__ = ()

    @property
    def emitted(self):
        return len(self.emitted_tokens)

    def to_doc(self):
        return dict(self._asdict())

    @classmethod
    def from_doc(cls, doc):
        return cls(**{name: doc.get(name) for name in _STATS_FIELDS})


def _first_row_only(matrix):
    # Prefill collects one row; relabel it as row 1 of a single-query matrix.
    return LogitMatrix(matrix.layer, matrix.logits, [1], 1, matrix.head_dim, matrix.col_offset, matrix.queries)


def prefill(weights, prompt, kv, mode=None, collect=True):
    """
    Full-attention forward over the prompt.

    :param list[int] prompt: at least one token, shorter than ``max_context``
    :type kv: KvStore
    :type mode: DecodeMode
    :param bool collect: capture the last prompt token's logits over the earlier prompt positions
    :return: (distribution of the token after the prompt, dict of layer -> LogitMatrix or None)
    """
    prompt = [int(t) for t in prompt]
    if not prompt:
        raise ValueError('Prompt must hold at least one token')
    if len(prompt) >= weights.config.max_context:
        raise ContextOverflowError('Prompt of %d tokens leaves no room in max_context %d'
                                   % (len(prompt), weights.config.max_context))
    mode = mode or DecodeMode.greedy()
    n = len(prompt)
    spec = CollectSpec(rows=[n - 1], prefix_len=n - 1) if collect else None
    logits, collected = forward(weights, prompt, list(range(kv.length, kv.length + n)), kv, FULL, spec)
    kv.commit()
    if collected is not None:
        collected = {layer: _first_row_only(matrix) for layer, matrix in collected.items()}
    return mode.distribution(logits[-1]), collected


def draft_chain(weights, kv, y, attend, params, meter=None):
    """
    Draft ``params.gamma`` tokens after `y` under sparse attention.

    Forwards ``y, x_1, .., x_(gamma-1)`` one at a time, appending provisional KV.

    :param int y: last emitted token, not yet in `kv`
    :type attend: AttendSpec
    :type params: DecodeParams
    :type meter: TrafficMeter
    :rtype: DraftState
    """
    window_start = kv.length
    tokens, q_dists = [], []
    token = int(y)
    for t in range(params.gamma):
        position = window_start + t
        logits, _ = forward(weights, [token], [position], kv, attend, meter=meter)
        q = params.mode.distribution(logits[0])
        token = choose_token(q, params.mode, rng.uniform(params.seed, rng.SAMPLE, position + 1))
        q_dists.append(q)
        tokens.append(token)
    return DraftState(int(y), window_start, tokens, q_dists)


def verify(weights, kv, state, params, iteration, collect_rows=None, meter=None, accept_all=False):
    """
    Judge a chain of drafts with one full-attention forward over ``[y, x_1..x_gamma]``.

    Provisional draft KV is dropped first; afterwards the store holds the verified KV of ``y`` and
    the accepted drafts, committed.

    :type state: DraftState
    :type params: DecodeParams
    :param int iteration: keys the accept/reject stream
    :param list[int] collect_rows: 0-based verification rows whose logits to collect, if any
    :rtype: VerifyOutcome
    """
    start = state.window_start
    gamma = len(state.draft_tokens)
    kv.truncate(start)
    inputs = [state.y] + list(state.draft_tokens)
    spec = CollectSpec(rows=list(collect_rows), prefix_len=start) if collect_rows else None
    logits, collected = forward(weights, inputs, list(range(start, start + gamma + 1)), kv, FULL, spec, meter)
    p_dists = [params.mode.distribution(row) for row in logits]

    def draws(t):
        u_accept, u_residual = rng.stream(params.seed, rng.ACCEPT, iteration, t).random(2)
        return float(u_accept), float(u_residual)

    bonus_u = rng.uniform(params.seed, rng.SAMPLE, start + gamma + 1)
    result = accept_drafts(state.draft_tokens, state.q_dists, p_dists, params.mode, draws, bonus_u,
                           accept_all=accept_all)
    kv.truncate(start + result.accepted_count + 1)
    kv.commit()
    return VerifyOutcome(result.accepted_count, result.emitted_tokens, p_dists, result.accept_probs,
                         result.rejected_accept_prob, collected)


def _mean_retention(previous, current):
    if not previous or not current:
        return None
    shared = sorted(set(previous) & set(current))
    if not shared:
        return None
    return float(numpy.mean([set_overlap(previous[layer].indices, current[layer].indices) for layer in shared]))


def _collected_bytes(collected):
    if not collected:
        return 0
    return sum(m.n_heads * m.rows * m.cols for m in collected.values()) * LOGIT_DUMP_BYTES


def _finish(tokens, params):
    tokens = list(tokens[:params.max_new_tokens])
    if params.eos_token is not None and params.eos_token in tokens:
        tokens = tokens[:tokens.index(params.eos_token) + 1]
    return tokens


class Session(object):
    """
    One speculative generation: owns a KV store, the committed tokens and the current selection.

    Sessions over the same :class:`sparsedraft.model.Weights` are independent and may run in
    separate processes.

    :type weights: sparsedraft.model.Weights
    :type params: DecodeParams
    :param list[int] prompt: prompt token ids
    :param bool accept_all: accept every draft unconditionally (fault drill)
    """

    def __init__(self, weights, params, prompt, accept_all=False):
        config = weights.config
        self.weights = weights
        self.params = params
        self.prompt = [int(t) for t in prompt]
        if not self.prompt:
            raise ValueError('Prompt must hold at least one token')
        needed = len(self.prompt) + params.max_new_tokens + params.gamma
        if needed > config.max_context:
            raise ContextOverflowError('Prompt of %d, %d new tokens and gamma %d need %d positions; '
                                       'max_context is %d' % (len(self.prompt), params.max_new_tokens,
                                                              params.gamma, needed, config.max_context))
        selector = params.selector
        self.kv = KvStore(config, page_size=selector.page_size if selector.strategy == QUEST else None)
        self.accept_all = accept_all
        self.tokens = list(self.prompt)
        self.generated = []
        self.y = None
        self.selections = None
        #: Logits collected by the latest verification, per dense layer.
        self.collected = None
        self.iteration = 0

    @property
    def finished(self):
        if len(self.generated) >= self.params.max_new_tokens:
            return True
        return self.params.eos_token is not None and self.params.eos_token in self.generated

    def output(self):
        """Generated tokens, cut at ``max_new_tokens`` and after the first end-of-sequence token."""
        return _finish(self.generated, self.params)

    def start(self):
        """
        Prefill the prompt, emit the first token and bootstrap the selection from the prompt's
        last row of logits.
        """
        params = self.params
        selector = params.selector
        probs, collected = prefill(self.weights, self.prompt, self.kv, params.mode, collect=selector.needs_logits)
        first = choose_token(probs, params.mode, rng.uniform(params.seed, rng.SAMPLE, len(self.prompt)))
        self.y = first
        self.tokens.append(first)
        self.generated.append(first)
        self.selections = self._refresh(collected, 0)
        _LOG.debug('Prefilled %d tokens, first token %d', len(self.prompt), first)

    def _refresh(self, collected, accepted_count):
        selector = self.params.selector
        if selector.needs_logits:
            dense = self.weights.config.dense_layers
            return {layer: select_from_logits(collected[layer], selector, accepted_count) for layer in dense}
        if selector.strategy == WINDOW:
            return {layer: select_window(self.kv.length, selector, layer)
                    for layer in self.weights.config.dense_layers}
        return None

    def _draft_attend(self):
        selector = self.params.selector
        if selector.strategy == QUEST:
            return AttendSpec.query_aware(quest_selector(selector, self.kv.length))
        return AttendSpec.sparse(self.selections)

    def decode_iteration(self):
        """
        Draft, verify, commit the emitted tokens and refresh the selection.

        :rtype: IterationStats
        """
        if self.y is None:
            raise ValueError('Session not started')
        params = self.params
        selector = params.selector
        gamma = params.gamma
        meter = TrafficMeter()

        state = draft_chain(self.weights, self.kv, self.y, self._draft_attend(), params, meter)
        draft_kv, draft_meta = meter.kv_bytes, meter.meta_bytes
        meter.reset()

        outcome = verify(self.weights, self.kv, state, params, self.iteration, selector.collect_rows_for(gamma),
                         meter, accept_all=self.accept_all)
        verify_kv = meter.kv_bytes

        self.collected = outcome.collected
        previous = self.selections
        self.selections = self._refresh(outcome.collected, outcome.accepted_count)

        emitted = outcome.emitted_tokens
        self.tokens.extend(emitted)
        self.generated.extend(emitted)
        self.y = emitted[-1]

        a = outcome.accepted_count
        flags = [True] * a + ([False] if a < gamma else [])
        stats = IterationStats(
            iteration=self.iteration,
            accepted=a,
            gamma=gamma,
            accept_flags=flags,
            accept_probs=[float(p) for p in outcome.accept_probs],
            rejected_accept_prob=outcome.rejected_accept_prob,
            prefix_len=state.window_start,
            emitted_tokens=list(emitted),
            draft_tokens=list(state.draft_tokens),
            draft_kv_bytes=int(draft_kv),
            draft_meta_bytes=int(draft_meta),
            verify_kv_bytes=int(verify_kv),
            collected_bytes=_collected_bytes(outcome.collected),
            selection_retention=_mean_retention(previous, self.selections),
            selector=selector.strategy,
        )
        _LOG.debug('Iteration %d at %d: accepted %d of %d', self.iteration, state.window_start, a, gamma)
        self.iteration += 1
        return stats


def generate(weights, prompt, params, accept_all=False):
    """
    Speculative generation until ``max_new_tokens`` are emitted or the end-of-sequence token.

    :type weights: sparsedraft.model.Weights
    :param list[int] prompt: prompt token ids
    :type params: DecodeParams
    :param bool accept_all: accept every draft unconditionally (fault drill)
    :return: (tokens, list of IterationStats)
    """
    session = Session(weights, params, prompt, accept_all=accept_all)
    session.start()
    stats = []
    while not session.finished:
        stats.append(session.decode_iteration())
    return session.output(), stats


def vanilla_generate(weights, prompt, mode, seed, max_new_tokens, eos_token=None):
    """
    Plain full-attention decoding, one token per forward: the reference speculative decoding must match.

    The token at absolute position P is chosen with the sample-stream draw keyed by P, the same
    draw speculative decoding uses for a draft or bonus token there.

    :rtype: list[int]
    """
    params = DecodeParams(gamma=1, mode=mode, seed=seed, max_new_tokens=max_new_tokens, eos_token=eos_token)
    config = weights.config
    if len(prompt) + max_new_tokens > config.max_context:
        raise ContextOverflowError('Prompt of %d and %d new tokens exceed max_context %d'
                                   % (len(prompt), max_new_tokens, config.max_context))
    kv = KvStore(config)
    probs, _ = prefill(weights, prompt, kv, params.mode, collect=False)
    generated = []
    while True:
        position = kv.length
        token = choose_token(probs, params.mode, rng.uniform(seed, rng.SAMPLE, position))
        generated.append(token)
        if len(generated) >= max_new_tokens or token == eos_token:
            break
        logits, _ = forward(weights, [token], [position], kv)
        kv.commit()
        probs = params.mode.distribution(logits[0])
    return generated


def recompute_kv(weights, tokens):
    """
    KV of `tokens` from a single full-attention forward in a fresh store.

    :rtype: KvStore
    """
    kv = KvStore(weights.config)
    forward(weights, tokens, list(range(len(tokens))), kv)
    kv.commit()
    return kv


def kv_matches(left, right):
    """Bitwise equality of two stores' live keys and values."""
    if left.length != right.length:
        return False
    return all(numpy.array_equal(left.layer_keys(layer), right.layer_keys(layer)) and
               numpy.array_equal(left.layer_values(layer), right.layer_values(layer))
               for layer in range(left.config.n_layers))
