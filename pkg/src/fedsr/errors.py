"""Exception types raised across the package."""


class FedSRError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(FedSRError, ValueError):
    pass


class InvalidStateError(FedSRError, RuntimeError):
    pass


class InfeasiblePartitionError(FedSRError):
    """A degradation type has clients but too few images to give each one."""

    def __init__(self, degradation_type, allotted, clients):
        self.degradation_type = degradation_type
        self.allotted = allotted
        self.clients = clients
        super().__init__(
            f"infeasible partition: type {degradation_type} has {clients} "
            f"client(s) but only {allotted} image(s) allotted"
        )


class ParseError(FedSRError, ValueError):
    def __init__(self, message, offset, path=None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte offset {offset})")


class CorruptedDatasetError(FedSRError):
    pass
