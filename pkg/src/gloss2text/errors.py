"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 1 (usage),
DataError and subclasses -> 2, NumericError -> 3.
"""


class Gloss2TextError(Exception):
    pass


class ConfigError(Gloss2TextError):
    """Invalid or inconsistent configuration."""


class DataError(Gloss2TextError):
    """Malformed or missing input data."""


class AlignmentError(DataError):
    """Parallel files or corpora whose lengths disagree."""


class EmptyCorpusError(DataError):
    """A corpus file or sentence that is empty where content is required."""


class VectorParseError(DataError):
    """Malformed line in a pretrained word-vector file."""


class ShapeError(Gloss2TextError):
    """Tensor operands with incompatible shapes."""


class ContractError(Gloss2TextError):
    """An operation called outside its stated preconditions."""


class NumericError(Gloss2TextError):
    """Non-finite values or other numeric failures during optimization."""
