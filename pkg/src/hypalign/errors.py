"""Error taxonomy shared by all modules.

Exit-code mapping used by the CLI: contract/config problems exit 1,
numerical-consistency problems exit 2 (a failed gradient check exits 3 but
is reported as data, not an exception).
"""


class HypalignError(Exception):
    """Base class for all package errors."""

    kind = "error"
    exit_code = 1


class ContractViolationError(HypalignError):
    """A caller broke a documented precondition (bad shapes, bad config,
    degenerate inputs)."""

    kind = "contract"
    exit_code = 1


class NumericalConsistencyError(HypalignError):
    """A quantity left its mathematically valid range by more than the
    tolerated floating-point drift, or a non-finite value appeared."""

    kind = "numerical"
    exit_code = 2


class GenerationError(ContractViolationError):
    """Synthetic-corpus generation could not satisfy its constraints."""

    kind = "generation"
