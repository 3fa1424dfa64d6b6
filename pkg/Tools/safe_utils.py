# safe_utils.py
# Description: Narrow exception guards: a decorator and a context manager that log and
# recover from listed exceptions, with handler-driven retries.

import functools
import logging
import time
from contextlib import contextmanager

logger = logging.getLogger(__name__)


class RetryableError(Exception):
    """Exception to signal that an operation should be retried."""
    pass


def safe_for(*exc_types, default=None, handler=None, max_retries=0, retry_delay=0, reraise=False):
    """
    Decorator factory: catch only exc_types, return `default` (or call
    `handler`) instead of blowing up. Supports retrying on RetryableError.

    - exc_types:   one or more Exception subclasses to catch.
    - default:     value to return when caught.
    - handler:     optional fn(exc, fn_name, args, kwargs); it may mutate
                   shared state (e.g. a fill schedule) and raise
                   RetryableError to ask for another attempt.
    - max_retries: number of times to retry if handler raises RetryableError.
    - retry_delay: seconds to wait between retries.
    - reraise:     re-raise the last caught exception instead of returning
                   `default` once the handler stops asking for retries.
    """
    def decorator(fn):
        @functools.wraps(fn)
        def wrapped(*args, **kwargs):
            attempts = 0
            while True:
                try:
                    return fn(*args, **kwargs)
                except exc_types as e:
                    logger.warning(f"Caught {e!r} in {fn.__name__!r}")
                    if handler:
                        try:
                            handler(e, fn.__name__, args, kwargs)
                        except RetryableError:
                            if attempts < max_retries:
                                attempts += 1
                                logger.info(f"Retrying {fn.__name__} (attempt {attempts})")
                                if retry_delay:
                                    time.sleep(retry_delay)
                                continue
                            logger.error(f"Max retries reached for {fn.__name__}")
                    if reraise:
                        raise
                    logger.warning(f"{fn.__name__!r} recovered with default={default!r}")
                    return default
        return wrapped
    return decorator


@contextmanager
def tolerate(*exc_types, label="block", handler=None):
    """
    Context-manager: wrap a block, catch exc_types and log them instead of
    propagating. The optional `handler(exc)` runs for side-effects, for
    example to record a fallback on a result object.
    """
    try:
        yield
    except exc_types as e:
        logger.warning(f"Caught {e!r} in {label}, continuing")
        if handler:
            handler(e)
