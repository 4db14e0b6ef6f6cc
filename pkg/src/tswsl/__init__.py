"""Tree-sliced Wasserstein distances on systems of lines."""
