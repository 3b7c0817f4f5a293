"""Design and verification of surface-electrode ion trap X-junctions."""
from .physics import DEFAULT_CONTEXT, PhysicalContext

__all__ = ["DEFAULT_CONTEXT", "PhysicalContext"]
__version__ = "0.1.0"
