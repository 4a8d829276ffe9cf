'''
Exception types raised by the LDP library layer.

Every exception carries the exit status the command layer uses when it
turns the failure into a process exit through exit_with_error.
'''

EXIT_DATA_ERROR = 1
EXIT_CONFIG_ERROR = 2
EXIT_DEPENDENCY_ERROR = 3
EXIT_NUMERIC_ERROR = 4
EXIT_INTERNAL_ERROR = 5


class LdpError(Exception):
    """ Base class of all LDP failures """
    exit_status = EXIT_INTERNAL_ERROR


class ConfigError(LdpError):
    """ Invalid configuration, unknown keys or incompatible settings """
    exit_status = EXIT_CONFIG_ERROR


class DataError(LdpError):
    """ Input data is empty, malformed or inconsistent """
    exit_status = EXIT_DATA_ERROR


class NumericError(LdpError):
    """ A non-finite value appeared in a checked computation """
    exit_status = EXIT_NUMERIC_ERROR


class StateError(LdpError):
    """ An operation was applied in the wrong lifecycle state (double inject, double merge) """
    exit_status = EXIT_INTERNAL_ERROR


class ContractError(LdpError):
    """ A caller broke an operation precondition that is not about data or config """
    exit_status = EXIT_INTERNAL_ERROR


class DimensionError(ConfigError):
    """ Tensor shapes do not agree """


class LengthError(DataError):
    """ A token sequence is longer than the model accepts """


class VocabularyError(DataError):
    """ A token id is outside the vocabulary """


class DegenerateBatchError(DataError):
    """ Every position of a batch is ignored """


class ArityError(DataError):
    """ Too few values for the requested aggregation """


class DegenerateCorpusError(DataError):
    """ A corpus is too small for the statistic requested """


class UndefinedKappaError(NumericError):
    """ Chance agreement equals one, so kappa is undefined """


class ValidationError(DataError):
    """ An input record failed validation; line_number points at the offending line when known """

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f'line {line_number}: {message}'
        super().__init__(message)
        self.line_number = line_number
