"""Clip slicing, training loop and long-form caption chaining."""
