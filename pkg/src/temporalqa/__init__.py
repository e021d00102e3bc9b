"""Seeded toolkit for building, debiasing, and scoring temporal video QA data."""

__version__ = "0.1.0"
