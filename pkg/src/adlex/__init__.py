"""Lexical analysis and co-attention classification of dementia picture-description transcripts."""

__version__ = "0.1.0"
