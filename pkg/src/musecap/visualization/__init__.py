"""Training plots."""
