"""Neural stage for the mouse side-channel pipeline: an encoder-only
attention denoiser over log-mel spectrograms and a small keyword
classifier. Exchanges data with the signal pipeline purely through files
(TensorFile spectrograms, WAVs, CSV labels)."""

__version__ = "0.1.0"
