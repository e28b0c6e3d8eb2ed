"""Uncertainty-aware training toolkit: MC-dropout decomposition, masked/distilled
objectives, data-subset selection, and the desk-scale experiments that exercise them."""

__version__ = "0.1.0"
