# coding=utf-8
"""
User Interface Utilities
"""
