"""Desk-scale dysarthric speech reconstruction with adversarial speaker adaptation."""

__version__ = "0.1.0"
