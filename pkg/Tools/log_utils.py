# log_utils.py
# Custom TRACE level and verbosity handling shared by run.py and the library.

import logging

# Define custom logging levels
TRACE = 5
logging.TRACE = TRACE
logging.addLevelName(TRACE, 'TRACE')


def trace(self, message, *args, **kwargs):
	if self.isEnabledFor(TRACE):
		self._log(TRACE, message, args, **kwargs)


logging.Logger.trace = trace


def set_log_level(verbosity: int) -> None:
	"""
	Set the logging level based on verbosity.

	Args:
		verbosity (int): Verbosity level (1-3)
			1: INFO (default)
			2: DEBUG
			3: TRACE (most verbose)

	Raises:
		ValueError: If verbosity is not 1, 2 or 3
	"""
	levels = {1: logging.INFO, 2: logging.DEBUG, 3: TRACE}
	if verbosity not in levels:
		raise ValueError(f"Invalid verbosity {verbosity}: expected 1, 2 or 3")
	logging.getLogger().setLevel(levels[verbosity])
