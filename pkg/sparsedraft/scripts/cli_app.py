#!/usr/bin/env python
# coding=utf-8
"""
sparsedraft command-line interface
"""

from __future__ import absolute_import

from sparsedraft.ui.click import cli
import sparsedraft.scripts.generate
import sparsedraft.scripts.selfcheck
import sparsedraft.scripts.bench


if __name__ == '__main__':
    cli()
