"""
Unit tests for radau-refine
"""
