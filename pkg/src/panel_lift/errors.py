"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can emit it
in JSON documents and trial records without string matching.
"""


class PanelLiftError(Exception):
    """Base class for all errors raised by the package."""

    code = "error"


class InputError(PanelLiftError, ValueError):
    code = "invalid_input"


class DimensionMismatch(InputError):
    code = "dimension_mismatch"


class NonFiniteInput(InputError):
    code = "non_finite"


class EmptyPattern(InputError):
    code = "empty_pattern"


class SvdNonConvergence(PanelLiftError):
    code = "svd_non_convergence"


class GramSingular(PanelLiftError):
    """Treatment patterns are (numerically) collinear after projection."""

    code = "gram_singular"


class NonConvergence(PanelLiftError):
    code = "non_convergence"


class TargetRankUnreachable(PanelLiftError):
    code = "target_rank_unreachable"


class ZeroPerpProjection(PanelLiftError):
    code = "zero_perp_projection"


class MultiTreatmentUnsupported(PanelLiftError):
    code = "multi_treatment_unsupported"


class Collinear(PanelLiftError):
    code = "collinear"


class EmptyControlRow(PanelLiftError):
    code = "empty_control_row"


class EmptyControlCol(PanelLiftError):
    code = "empty_control_col"


class PatternUnsupported(PanelLiftError):
    code = "pattern_unsupported"


class NoControls(PanelLiftError):
    code = "no_controls"


class GdDivergence(PanelLiftError):
    """Gradient descent blew up; the partial trace is attached."""

    code = "gd_divergence"

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(PanelLiftError):
    """Configuration failed validation; ``problems`` lists every violation."""

    code = "config_error"

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ParseError(PanelLiftError):
    code = "parse_error"

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
