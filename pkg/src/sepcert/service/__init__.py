from .schemas import Report
from .handlers import UsageError

__all__ = ["Report", "UsageError"]
