from .hyperscript import E
from .records import I2b2Record
from .sections import Section

__all__ = ["E", "I2b2Record", "Section"]
