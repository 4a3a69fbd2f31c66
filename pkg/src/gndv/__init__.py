"""Generative per-sample Gaussian embeddings for visualisation and sampling."""
