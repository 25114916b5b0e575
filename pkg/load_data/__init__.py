"""Load data: fleet generation and ingestion, windowing, masking, quantization."""
