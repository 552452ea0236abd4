"""musecap - Multi-task music captioning with a frozen language model."""

__version__ = "0.1.0"
