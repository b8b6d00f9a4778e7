"""seqforge: desk-scale multilingual seq2seq training, compression and decoding."""

__version__ = "0.1.0"
