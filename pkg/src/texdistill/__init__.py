"""Texture-aware knowledge distillation for spectrogram classifiers.

Statistical (quantised co-occurrence) and structural (Laplacian pyramid plus
compass edges) textures of an intermediate feature map are matched between a
large teacher and a small student, alongside response distillation on
tempered class CDFs.
"""
__version__ = "0.1.0"
