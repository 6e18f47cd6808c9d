"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
3 for bad input data or configuration, 4 for model / protocol failures.
"""


class PcxError(Exception):
    exit_code = 1


class DataError(PcxError):
    exit_code = 3


class ModelError(PcxError):
    exit_code = 4


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class EmptyGeometry(DataError):
    pass


class DegenerateMesh(DataError):
    pass


class InvalidConfig(DataError):
    pass


class InvalidDataset(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptyResult(DataError):
    pass


class SingularFit(DataError):
    pass


class InvalidCoalition(DataError):
    pass


class TooManyClusters(DataError):
    pass


class MissingContributions(DataError):
    pass


class ZeroMax(DataError):
    pass


class NoGradient(ModelError):
    pass


class ModelParseError(ParseError, ModelError):
    exit_code = 4


class VersionMismatch(ModelError):
    pass


class DivergedLoss(ModelError):
    pass


class ProcessExit(ModelError):
    pass


class ProtocolError(ModelError):
    pass


class ClassifierTimeout(ModelError):
    pass
