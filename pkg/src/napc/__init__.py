"""Neural passenger counting: LSTM counter, fixed-point quantization and test-success simulation."""

__version__ = "0.1.0"
