"""Data model layer: choice data, embeddings, semantic labels and zone maps."""
