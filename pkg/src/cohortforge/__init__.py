"""Distribution-matched augmentation of trial control arms from an external pool."""

__version__ = "0.1.0"
