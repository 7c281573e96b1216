"""cityfold: turn LoD2 building models into latent codewords, then
cluster and geospatially group them by shape similarity."""

__version__ = "0.1.0"
