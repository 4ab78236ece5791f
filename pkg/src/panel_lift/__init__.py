"""De-biased convex estimation of treatment effects in low-rank panels."""

__version__ = "0.1.0"

from panel_lift.errors import PanelLiftError  # noqa: E402
from panel_lift.pipeline import EstimateResult, estimate_effects  # noqa: E402

__all__ = ["PanelLiftError", "EstimateResult", "estimate_effects", "__version__"]
