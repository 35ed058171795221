"""Exception types shared across the package."""


class TomographyError(Exception):
    """Base class for all qproctomo errors."""


class DimensionMismatch(TomographyError):
    """Operands have incompatible Hilbert-space or array dimensions."""


class NearSingular(TomographyError):
    """A matrix is too close to singular for a stable inverse square root.

    Raised for degenerate parameter draws; samplers treat it as a rejected
    proposal rather than aborting.
    """


class NotUnitary(TomographyError):
    """A matrix expected to be unitary is not, beyond tolerance."""


class UnsupportedDimension(TomographyError):
    """Operation is only defined for qubits (the Pauli operator basis)."""


class InvalidCounts(TomographyError):
    """Observed counts are impossible under the model (n > 0 where the
    expected count is exactly zero)."""


class EmptyData(TomographyError):
    """A dataset required to contain rows is empty."""


class BadSpec(TomographyError):
    """A model specification string could not be parsed."""


class WindowEmpty(TomographyError):
    """No wavelengths fall inside the requested window."""
