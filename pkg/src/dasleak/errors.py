"""Exception types shared across the pipeline."""


class DataFormatError(Exception):
    """A file failed magic/version/shape validation."""


class NumericalError(Exception):
    """Training or inference produced non-finite values."""

    def __init__(self, message, epoch=None, batch=None, layer=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.layer = layer


class UsageError(Exception):
    """Bad command-line arguments or configuration."""
