"""FCDN: functional-connectivity-guided EEG decoding."""
