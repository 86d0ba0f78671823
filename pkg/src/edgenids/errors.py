"""Exception hierarchy shared by every stage of the pipeline."""


class EdgeNidsError(Exception):
    """Base class; the CLI maps any subclass to exit code 2."""


# ingestion / preprocessing
class MissingFile(EdgeNidsError):
    pass


class HeaderMismatch(EdgeNidsError):
    pass


class RowArity(EdgeNidsError):
    def __init__(self, row_index: int, expected: int, got: int):
        super().__init__(f"row {row_index}: expected {expected} cells, got {got}")
        self.row_index = row_index


class LabelError(EdgeNidsError):
    pass


class IdentifierMissing(EdgeNidsError):
    pass


class NonFiniteInput(EdgeNidsError):
    pass


class SchemaColumnMissing(EdgeNidsError):
    pass


class EmptyClass(EdgeNidsError):
    pass


class WrongLength(EdgeNidsError):
    pass


# models / training
class InvalidParam(EdgeNidsError):
    pass


class ShapeMismatch(EdgeNidsError):
    pass


class Diverged(EdgeNidsError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class FormatError(EdgeNidsError):
    """Malformed model, schema, profile or config file."""


# quantization / integer inference
class EmptyCalibration(EdgeNidsError):
    pass


class RangeMissing(EdgeNidsError):
    pass


class StructureMismatch(EdgeNidsError):
    pass


class AccumulatorOverflow(EdgeNidsError):
    pass


# cost model
class Underdetermined(EdgeNidsError):
    pass


class NonConvergence(EdgeNidsError):
    pass


# reporting
class EmptyTable(EdgeNidsError):
    pass


class UnwritableOutput(EdgeNidsError):
    pass
