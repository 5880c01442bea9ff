"""Exception hierarchy shared by every stage of the benchmark."""


class SensBenchError(Exception):
    """Base class for all errors raised by sensbench."""


class SchemaError(SensBenchError):
    """The input file does not carry the columns the schema names."""


class DataError(SensBenchError):
    """The input data violates a panel invariant."""


class ConfigError(SensBenchError):
    """A configuration value is out of range or inconsistent."""


class EmptyWindowSetError(SensBenchError):
    """No entity is long enough for the requested lookback + horizon."""


class TrainingError(SensBenchError):
    """Training could not produce a usable model."""


class ContractError(SensBenchError):
    """A model was called with input that violates its predict contract."""


class AdapterError(SensBenchError):
    """An external model process failed, timed out or sent a bad frame."""


class HandshakeError(AdapterError):
    """The external model declared a spec different from the engine's."""


class EvaluationError(SensBenchError):
    """A sensitivity method received a non-finite model output."""


class InputError(SensBenchError):
    """Invalid input to a ranking or correlation routine."""


class UndefinedCorrelationError(InputError):
    """Spearman correlation is undefined because one side has no rank variance."""


class ReportError(SensBenchError):
    """The run directory cannot be summarised."""
