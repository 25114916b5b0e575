"""Accuracy metrics and restoration reports."""
