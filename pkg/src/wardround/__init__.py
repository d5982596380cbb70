"""Physician/assistant dialogue harness over clinical records with ICD-10 scoring."""

__version__ = "0.1.0"
