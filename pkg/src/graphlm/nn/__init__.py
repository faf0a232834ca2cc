"""Shared numerical building blocks: activations, MLP, optimizer."""
