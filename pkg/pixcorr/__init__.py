"""pixcorr - Transfer inter-pixel correlations from a source-trained self-attention module
into self-training domain adaptation for semantic segmentation."""

__version__ = "0.1.0"
