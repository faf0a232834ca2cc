"""graphlm: ensemble GNN encoders through a small LM via graph-token injection."""

__version__ = "0.1.0"
