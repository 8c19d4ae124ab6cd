"""Desk-scale video/text/audio self-supervised pre-training tools."""

__version__ = "0.1.0"
