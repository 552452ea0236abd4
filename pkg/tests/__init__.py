"""Tests for the musecap package."""
