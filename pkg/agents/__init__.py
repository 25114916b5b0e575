"""Restoration approaches: the BERT-PIN encoder and naive baselines."""
