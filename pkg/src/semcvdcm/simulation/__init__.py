"""Synthetic datasets with known coefficients and the recovery experiment."""
