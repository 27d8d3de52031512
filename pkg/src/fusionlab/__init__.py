"""Multimodal fusion lab: train and evaluate fusion strategies over
precomputed per-modality embeddings, on a from-scratch autodiff core."""

__version__ = "0.1.0"
