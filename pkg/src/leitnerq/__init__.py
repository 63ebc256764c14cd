"""Leitner queue network models for spaced repetition: log ingestion,
recall-model fitting and evaluation, simulation and schedule planning."""

__version__ = "0.1.0"
