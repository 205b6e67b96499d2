"""Issue-to-file localisation: commit-graph link mining, dataset construction,
retrieval models and evaluation statistics."""

__version__ = "0.1.0"
