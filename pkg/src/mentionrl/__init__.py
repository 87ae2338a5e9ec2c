"""Relation mention extraction from noisy, distantly supervised text with
hierarchical reinforcement learning: a sentence selector removes noisy
sentences, a word-level extractor picks mention spans, a frozen CNN relation
classifier supplies the reward signal, and extracted mentions are ranked into
per-relation lexicons.
"""

__version__ = "0.1.0"
