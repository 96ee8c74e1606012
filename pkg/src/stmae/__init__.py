"""Spatiotemporal masked autoencoding for multi-band image time series.

The package covers the full desk-scale pipeline: synthetic scene generation
and ingestion, 4D window masking with partial unmasking, frequency-domain
window augmentation, a hybrid convolution/window-attention encoder with a
reconstruction decoder, the dual spatial+spectral reconstruction loss, a
seeded pretraining loop, and downstream segmentation / classification /
change-detection heads with a metrics suite.
"""

__version__ = "0.1.0"
