"""
Tests for ebm-saliency.
"""
