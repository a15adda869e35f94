"""Training, inference protocols, synthetic data and weight files."""
