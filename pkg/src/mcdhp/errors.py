"""Exception types shared across the codec."""


class ConfigurationError(ValueError):
    """Invalid configuration or input dimensions (e.g. non-tiling windows)."""


class ContractError(RuntimeError):
    """A runtime contract between components was violated (shape/stage mismatch)."""


class StreamError(RuntimeError):
    """Bitstream is truncated, corrupt, or structurally invalid."""


class ModelMismatchError(StreamError):
    """Bitstream was produced by a different model than the one decoding it."""
