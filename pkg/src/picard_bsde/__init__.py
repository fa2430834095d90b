"""Picard iterations for backward SDEs: closed-form iterates of a linear
example, explicit error envelopes, Monte-Carlo error estimation and a nested
Monte-Carlo Picard solver."""

__version__ = "0.1.0"
