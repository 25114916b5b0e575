"""Run configuration and pipeline commands."""
