"""Applications built on the key-value clerk."""
