"""Exception hierarchy shared by the engine, the file formats, and the CLI.

Exit-code convention used by the CLI: 2 usage, 3 malformed file,
4 numeric/semantic contract violation.
"""


class QnnError(Exception):
    """Base class for all engine errors."""

    exit_code = 4


class FormatError(QnnError):
    """A file did not parse as the format it claims to be."""

    exit_code = 3


class BadMagic(FormatError):
    pass


class BadVersion(FormatError):
    pass


class Truncated(FormatError):
    pass


class InvalidNode(FormatError):
    """A node record is malformed (unknown op code, bad arity, bad attribute)."""

    def __init__(self, message, node_id=None):
        super().__init__(message)
        self.node_id = node_id


class ShapeMismatch(QnnError):
    pass


class QuantizerOrder(QnnError):
    """A kernel would need a shift amount its formula does not define."""

    pass


class UnsupportedStride(QnnError):
    pass


class SlopeOutOfRange(QnnError):
    """LeakyReLU slope magnitude must stay below 1."""

    pass


class Unquantizable(QnnError):
    """A node kind has no integer execution rule."""

    pass


class CalibrationEmpty(QnnError):
    pass


class OutOfFrame(QnnError):
    """The reference-sample region starts outside the frame; callers fall
    back to the conventional PLANAR prediction."""

    pass


class MissingModel(QnnError):
    pass


class MissingPlane(QnnError):
    pass
