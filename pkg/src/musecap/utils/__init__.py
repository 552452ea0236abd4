"""Utility functions shared across musecap."""
