"""Utility functions for the nudgelab package.
"""
