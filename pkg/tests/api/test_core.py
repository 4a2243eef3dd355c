# coding=utf-8
"""
The speculative decoding loop against plain decoding
"""
from __future__ import absolute_import

import pytest

from sparsedraft.api import DecodeParams, DecodeMode, IterationStats, Session, prefill, draft_chain, verify, \
    generate, vanilla_generate, recompute_kv, kv_matches
from sparsedraft.attention import AttendSpec, CollectSpec
from sparsedraft.model.transformer import forward
from sparsedraft.selection import SelectorConfig, SelectionSet, STRATEGIES, QUEST, WINDOW, COLLECT2, \
    selection_size
from sparsedraft.storage import KvStore
from sparsedraft.utils import ContextOverflowError


def _params(strategy=COLLECT2, gamma=3, ratio=0.25, mode=None, seed=0, max_new_tokens=20, eos_token=None):
    selector = SelectorConfig(strategy=strategy, sparse_ratio=ratio, k_min=4, page_size=4, collect_rows=3)
    return DecodeParams(gamma=gamma, selector=selector, mode=mode, seed=seed, max_new_tokens=max_new_tokens,
                        eos_token=eos_token)


def _vanilla(weights, prompt, params):
    return vanilla_generate(weights, prompt, params.mode, params.seed, params.max_new_tokens, params.eos_token)


@pytest.mark.parametrize('strategy', STRATEGIES)
@pytest.mark.parametrize('gamma', [1, 3, 5])
def test_greedy_output_matches_plain_decoding(tiny_weights, prompt, strategy, gamma):
    params = _params(strategy, gamma)
    tokens, stats = generate(tiny_weights, prompt, params)
    assert tokens == _vanilla(tiny_weights, prompt, params)
    assert len(tokens) == params.max_new_tokens
    assert all(s.selector == strategy for s in stats)


@pytest.mark.parametrize('strategy', [WINDOW, QUEST, COLLECT2, 'last_accepted', 'all_draft'])
def test_committed_kv_equals_recomputation(tiny_weights, prompt, strategy):
    session = Session(tiny_weights, _params(strategy, gamma=4), prompt)
    session.start()
    while not session.finished:
        stats = session.decode_iteration()
        assert session.kv.committed_len == session.kv.length == len(session.tokens) - 1
        assert kv_matches(session.kv, recompute_kv(tiny_weights, session.tokens[:-1]))
        assert stats.emitted == stats.accepted + 1
        assert stats.emitted_tokens[:stats.accepted] == stats.draft_tokens[:stats.accepted]


@pytest.mark.parametrize('strategy', STRATEGIES)
def test_full_ratio_accepts_every_draft(tiny_weights, prompt, strategy):
    _, stats = generate(tiny_weights, prompt, _params(strategy, gamma=4, ratio=1.0))
    assert stats
    assert all(s.accepted == 4 for s in stats)
    assert all(s.accept_probs == [1.0] * 4 for s in stats)


def test_full_ratio_sampling_matches_plain_sampling(tiny_weights, prompt):
    for seed in range(3):
        params = _params(gamma=3, ratio=1.0, mode=DecodeMode.sample(0.8), seed=seed)
        tokens, stats = generate(tiny_weights, prompt, params)
        assert tokens == _vanilla(tiny_weights, prompt, params)
        assert all(s.accepted == 3 for s in stats)


def test_sampling_is_reproducible(tiny_weights, prompt):
    params = _params(gamma=4, mode=DecodeMode.sample(1.0), seed=11)
    first = generate(tiny_weights, prompt, params)
    second = generate(tiny_weights, prompt, params)
    assert first == second
    for s in first[1]:
        assert s.accepted <= 4
        assert (s.rejected_accept_prob is None) == (s.accepted == 4)


def test_single_token_generation(tiny_weights, prompt):
    params = _params(max_new_tokens=1)
    tokens, stats = generate(tiny_weights, prompt, params)
    assert stats == []
    assert tokens == _vanilla(tiny_weights, prompt, params)
    assert len(tokens) == 1


def test_generation_stops_after_end_of_sequence(tiny_weights, prompt):
    reference = _vanilla(tiny_weights, prompt, _params())
    eos = reference[6]
    params = _params(gamma=4, eos_token=eos)
    tokens, _ = generate(tiny_weights, prompt, params)
    assert tokens == _vanilla(tiny_weights, prompt, params)
    assert tokens[-1] == eos
    assert tokens.count(eos) == 1
    assert len(tokens) <= 7


def test_iteration_stats(tiny_weights, prompt):
    params = _params(gamma=3)
    tokens, stats = generate(tiny_weights, prompt, params)
    assert sum(s.emitted for s in stats) + 1 >= len(tokens)
    prefix = len(prompt)
    for s in stats:
        assert s.prefix_len == prefix
        prefix += s.emitted
        assert s.accept_flags == [True] * s.accepted + ([False] if s.accepted < 3 else [])
        assert len(s.accept_probs) == 3
        assert s.draft_kv_bytes > 0 and s.verify_kv_bytes > 0
        assert s.collected_bytes > 0
        assert s.draft_meta_bytes == 0
        assert IterationStats.from_doc(s.to_doc()) == s
    assert stats[0].selection_retention is not None


def test_selection_overheads_by_strategy(tiny_weights, prompt):
    _, window = generate(tiny_weights, prompt, _params(WINDOW))
    assert all(s.collected_bytes == 0 and s.draft_meta_bytes == 0 for s in window)
    _, quest = generate(tiny_weights, prompt, _params(QUEST))
    assert all(s.collected_bytes == 0 and s.draft_meta_bytes > 0 for s in quest)
    assert all(s.selection_retention is None for s in quest)


def test_draft_and_verify_roll_back_provisional_kv(tiny_weights, prompt):
    params = _params(gamma=4)
    kv = KvStore(tiny_weights.config)
    probs, collected = prefill(tiny_weights, prompt, kv)
    assert kv.committed_len == len(prompt)
    assert collected[0].row_labels == (1,)
    assert collected[0].cols == len(prompt) - 1

    selections = {layer: SelectionSet(layer, [0, 1, 2, 3], 'test', len(prompt))
                  for layer in tiny_weights.config.dense_layers}
    state = draft_chain(tiny_weights, kv, int(probs.argmax()), AttendSpec.sparse(selections), params)
    assert kv.length == len(prompt) + 4
    assert kv.committed_len == len(prompt)
    assert len(state.q_dists) == 4

    outcome = verify(tiny_weights, kv, state, params, iteration=0, collect_rows=[0, 4])
    assert kv.length == kv.committed_len == len(prompt) + outcome.accepted_count + 1
    assert outcome.collected[1].row_labels == (1, 5)
    assert outcome.collected[1].cols == len(prompt)


def test_banded_layers_keep_their_window(banded_weights, prompt):
    params = _params(gamma=3)
    tokens, stats = generate(banded_weights, prompt, params)
    assert tokens == _vanilla(banded_weights, prompt, params)

    session = Session(banded_weights, params, prompt)
    session.start()
    assert sorted(session.selections) == [0, 2]


def test_context_must_fit(tiny_weights):
    config = tiny_weights.config
    with pytest.raises(ContextOverflowError):
        Session(tiny_weights, _params(max_new_tokens=20, gamma=5), [1] * (config.max_context - 20))
    with pytest.raises(ContextOverflowError):
        prefill(tiny_weights, [1] * config.max_context, KvStore(config))
    with pytest.raises(ContextOverflowError):
        vanilla_generate(tiny_weights, [1] * 120, DecodeMode.greedy(), 0, 10)
    with pytest.raises(ValueError):
        Session(tiny_weights, _params(), [])


def test_session_must_start_first(tiny_weights, prompt):
    with pytest.raises(ValueError):
        Session(tiny_weights, _params(), prompt).decode_iteration()


@pytest.mark.parametrize('bad', [dict(gamma=0), dict(seed=-1), dict(max_new_tokens=0)])
def test_decode_params_validation(bad):
    with pytest.raises(ValueError):
        DecodeParams(**bad)


def test_decode_params_document():
    doc = _params(gamma=2).to_doc()
    assert doc['gamma'] == 2
    assert doc['selector']['strategy'] == COLLECT2
    assert doc['mode'] == {'name': 'greedy', 'temperature': 1.0}


def test_first_selection_comes_from_the_prompt_logits(tiny_weights, prompt):
    config = tiny_weights.config
    params = _params(COLLECT2, ratio=0.5)
    session = Session(tiny_weights, params, prompt)
    session.start()

    # the last prompt token again, on its own, over the rest of the prompt
    kv = KvStore(config)
    forward(tiny_weights, prompt[:-1], list(range(len(prompt) - 1)), kv)
    prefix_len = len(prompt) - 1
    _, collected = forward(tiny_weights, prompt[-1:], [prefix_len], kv,
                           collect=CollectSpec(rows=[0], prefix_len=prefix_len))
    k = selection_size(prefix_len, params.selector)

    for layer in config.dense_layers:
        keys = kv.layer_keys(layer)
        queries = collected[layer].queries[0]
        scores = []
        for col in range(prefix_len):
            total = 0.0
            for head in range(config.n_q_heads):
                kv_head = head // config.group_size
                total += sum(float(queries[head, d]) * float(keys[col, kv_head, d]) for d in range(config.head_dim))
            scores.append(total / config.n_q_heads)
        expected = sorted(sorted(range(prefix_len), key=lambda col: (-scores[col], col))[:k])

        chosen = session.selections[layer]
        assert chosen.prefix_len == prefix_len
        assert chosen.indices.tolist() == expected
