"""Keeps this directory importable (for synth.py) regardless of rootdir."""
