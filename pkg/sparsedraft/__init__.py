"""
sparsedraft
===========

A self-speculative decoding lab. One toy transformer drafts tokens with sparse attention over a
selected subset of its KV cache, then verifies them with full attention; the attention logits
collected during verification choose the next subset.

The main entry point is :py:func:`sparsedraft.api.generate`; :py:func:`sparsedraft.api.vanilla_generate`
is the plain decoding it must reproduce.
"""
from __future__ import absolute_import
from .version import __version__
