"""BERT-PIN encoder, trainer, checkpoints and candidate selection."""
