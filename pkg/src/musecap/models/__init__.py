"""Neural components: audio encoder, projector, language-model bridge and captioner."""
