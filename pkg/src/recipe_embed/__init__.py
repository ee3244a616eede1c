"""Cross-modal recipe and food-image embeddings."""
