"""FREEDOM multimodal recommender with a compiled sparse core."""
