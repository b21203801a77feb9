"""
Exception hierarchy for the simulator
Every error carries a human readable message; some carry the location of the failure
"""
from typing import Optional


class PFedGRPError(Exception):
    """
    Base class for all errors raised by the simulator
    """
    def __init__(self, message: str = "Simulation error"):
        self.message = message
        super().__init__(self.message)


class ContractViolation(PFedGRPError):
    """
    Exception raised when an operation is called outside its preconditions
    """


class ConfigurationError(PFedGRPError):
    """
    Exception raised when configuration values are mutually inconsistent
    """


class ArchitectureError(PFedGRPError):
    """
    Exception raised when parameters do not belong to the expected architecture
    """


class NumericError(PFedGRPError):
    """
    Exception raised on non-finite inputs or parameters
    """


class TrainingError(PFedGRPError):
    """
    Exception raised when local training diverges
    """
    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"{message} (epoch {epoch})")


class OptimizationError(PFedGRPError):
    """
    Exception raised when aggregation weight optimization hits a non-finite loss
    """
    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"{message} (step {step})")


class IdxParseError(PFedGRPError):
    """
    Exception raised when an IDX file violates the format
    """
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


class DataBudgetError(PFedGRPError):
    """
    Exception raised when a task requests more data than its slice holds
    """


class ReplayError(PFedGRPError):
    """
    Exception raised when replay is requested for a class without a sub-model
    """
    def __init__(self, class_id: int, message: Optional[str] = None):
        self.class_id = class_id
        super().__init__(message or f"No auxiliary sub-model for class {class_id}")


class CacheConsistencyError(PFedGRPError):
    """
    Exception raised when the server mirror lacks a sub-model a client reported
    """
    def __init__(self, client_id: int, class_id: int):
        self.client_id = client_id
        self.class_id = class_id
        super().__init__(
            f"Client {client_id} reports class {class_id} but its mirrored auxiliary model has no sub-model for it"
        )


class ConfigError(PFedGRPError):
    """
    Exception raised when a configuration document is malformed
    The path names the offending key, e.g. "sgd.learning_rate"
    """
    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ExperimentError(PFedGRPError):
    """
    Exception raised when a run aborts; records where it stopped
    """
    def __init__(self, message: str, round_index: int, phase: str):
        self.round_index = round_index
        self.phase = phase
        super().__init__(f"Round {round_index}, phase '{phase}': {message}")
