"""Blood-smear cell localization and malaria life-stage classification."""
from .boxes import BoundingBox
from .stages import StageLabel

__version__ = "0.1.0"

__all__ = ["BoundingBox", "StageLabel", "__version__"]
