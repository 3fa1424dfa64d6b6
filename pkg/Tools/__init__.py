from .log_utils import TRACE, set_log_level
from .safe_utils import safe_for, tolerate, RetryableError
from . import errors

__all__ = ['TRACE', 'set_log_level', 'safe_for', 'tolerate', 'RetryableError', 'errors']
