"""Medical question routing: corpus ingestion, augmentation, a from-scratch
transformer-encoder classifier, evaluation harness and routing service."""

__version__ = "0.1.0"
