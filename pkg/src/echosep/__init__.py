"""Echo-aware multichannel NMF source separation."""
__version__ = "0.1.0"
