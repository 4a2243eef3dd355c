# coding=utf-8
"""
Module
"""
from __future__ import absolute_import
