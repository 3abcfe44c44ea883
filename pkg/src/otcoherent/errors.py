"""Exception hierarchy shared by all modules.

Input problems derive from :class:`InputError` (also a ``ValueError``),
numerical failures from :class:`SolverError` (also a ``RuntimeError``).
The CLI maps the two families onto distinct exit codes.
"""


class CoherentSetError(Exception):
    """Base class for every error raised by this package."""

    code = "error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class InputError(CoherentSetError, ValueError):
    code = "input_error"


class ParseError(InputError):
    code = "parse_error"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

    def to_dict(self):
        d = super().to_dict()
        d["line"] = self.line
        return d


class EmptyInputError(InputError):
    code = "empty_input"


class DimensionMismatchError(InputError):
    code = "dimension_mismatch"


class ZeroMassError(InputError):
    code = "zero_mass"


class MassMismatchError(InputError):
    code = "mass_mismatch"


class ParameterError(InputError):
    code = "parameter_error"


class DegenerateEpsilonError(ParameterError):
    code = "degenerate_epsilon"


class ChainMismatchError(InputError):
    code = "chain_mismatch"


class UnsupportedStructureError(InputError):
    code = "unsupported_structure"


class DegeneratePlanError(InputError):
    code = "degenerate_plan"


class DegenerateClusterError(InputError):
    code = "degenerate_cluster"


class SingularPointError(InputError):
    code = "singular_point"


class SolverError(CoherentSetError, RuntimeError):
    code = "solver_failure"


class ConvergenceError(SolverError):
    """Raised by callers (e.g. the CLI) that refuse unconverged plans."""

    code = "not_converged"
