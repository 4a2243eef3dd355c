# coding=utf-8
"""
Self-speculative generation: sparse-attention drafting verified by full attention.
"""
from __future__ import absolute_import

from .core import (DecodeParams, DraftState, VerifyOutcome, IterationStats, Session, prefill, draft_chain, verify,
                   generate, vanilla_generate, recompute_kv, kv_matches)
from .sampling import DecodeMode, residual_distribution, accept_drafts, sample_token

__all__ = ['DecodeParams', 'DecodeMode', 'DraftState', 'VerifyOutcome', 'IterationStats', 'Session', 'prefill',
           'draft_chain', 'verify', 'generate', 'vanilla_generate', 'recompute_kv', 'kv_matches',
           'residual_distribution', 'accept_drafts', 'sample_token']
