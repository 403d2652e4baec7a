__version__: str = "0.0.0"
