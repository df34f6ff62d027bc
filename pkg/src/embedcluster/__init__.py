"""Patient stratification from single-channel EEG via deep embeddings and clustering."""

__version__ = "0.1.0"
