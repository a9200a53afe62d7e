"""Error taxonomy shared by every component.

The CLI maps these onto process exit codes (see ``CFSFL.constants``).
"""


class CFSFLError(Exception):
    pass


class ShapeError(CFSFLError, ValueError):
    pass


class NumericError(CFSFLError, ArithmeticError):
    """Non-finite value encountered; optionally tagged with training position."""

    def __init__(self, message: str, stage=None, epoch=None, batch=None):
        self.stage = stage
        self.epoch = epoch
        self.batch = batch
        where = [f"{k}={v}" for k, v in (("stage", stage), ("epoch", epoch), ("batch", batch)) if v is not None]
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ContractError(CFSFLError, ValueError):
    pass


class DataError(CFSFLError, ValueError):
    pass


class FormatError(DataError):
    pass


class ParameterError(CFSFLError, ValueError):
    pass


class ConfigError(CFSFLError, ValueError):
    pass


class CheckpointError(CFSFLError, ValueError):
    pass
