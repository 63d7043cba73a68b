"""deskdiar: desk-scale speaker diarization with latent-space embeddings.

Trains a ClusterGAN (generator/critic/encoder) on labeled speaker
embeddings, optionally fine-tunes the encoder with an episodic
prototypical loss (MCGAN stage), clusters per-segment embeddings with
NME-tuned spectral clustering, and scores hypotheses with NIST-style
DER plus speaker-count and purity metrics.  Synthetic corpora make the
whole pipeline verifiable on a desk machine.
"""

__version__ = "0.1.0"
