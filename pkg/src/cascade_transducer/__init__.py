"""Cascaded neural transducers."""
