"""Exception types shared across the package."""


class PcdimError(Exception):
    """Base class for all pcdim errors."""


class DataError(PcdimError):
    """Invalid input data: malformed records, empty streams, degenerate geometry."""


class SchemaError(DataError):
    """A required attribute/feature is missing from the data schema."""
