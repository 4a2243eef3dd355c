# coding=utf-8
"""
Modules for persisting weights and caching keys/values
"""
from __future__ import absolute_import

from .kv_store import KvStore
from .weights_file import save_weights, load_weights

__all__ = ['KvStore', 'save_weights', 'load_weights']
