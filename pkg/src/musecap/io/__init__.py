"""Input/output: audio, manifests, vocabularies, checkpoints, caches and chat clients."""
