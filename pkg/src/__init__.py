"""Unsupervised local discrimination representation learning package."""
