# config.py
# Description: Solver and learning knobs, read from the environment (or a .env file).

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, asdict, replace
from typing import Any, Callable, Dict, Optional

from dotenv import load_dotenv, find_dotenv

from Tools.errors import ConfigError

logger = logging.getLogger(__name__)

# Load environment variables from .env file if present
load_dotenv(find_dotenv(usecwd=True))


@dataclass(frozen=True)
class SolverSettings:
    """
    Numerical knobs shared by the sparse solver, the OLE and the learning stage.

    Every field can be overridden with an environment variable named
    RECON_<FIELD NAME IN CAPS>, e.g. RECON_DROP_TOL=1e-4.
    """
    drop_tol: float = 1e-3            # ILU relative drop tolerance
    max_fill: int = 10                # initial ILU fill per row
    fill_doublings: int = 4           # how often the fill may double before giving up
    cg_rel_tol: float = 1e-2          # ||Ax - b|| / ||b|| stopping rule
    residual_check: int = 25          # true-residual refresh period (iterations)
    trace_exact_limit: int = 4096     # N_s above which trace(A^-1) is estimated stochastically
    trace_samples: int = 64           # Rademacher vectors for the stochastic trace
    trace_rel_err: float = 0.02       # reported target for the stochastic trace
    prob_eps: float = 1e-4            # posterior probability clamp
    threads: int = 1                  # worker threads for ensembles and grids

    def __post_init__(self):
        checks = {
            'drop_tol': self.drop_tol >= 0 and math.isfinite(self.drop_tol),
            'max_fill': self.max_fill >= 1,
            'fill_doublings': self.fill_doublings >= 0,
            'cg_rel_tol': 0 < self.cg_rel_tol < 1,
            'residual_check': self.residual_check >= 1,
            'trace_exact_limit': self.trace_exact_limit >= 1,
            'trace_samples': self.trace_samples >= 2,
            'trace_rel_err': self.trace_rel_err > 0,
            'prob_eps': 0 < self.prob_eps < 0.5,
            'threads': self.threads >= 1,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise ConfigError(f"Invalid solver settings: {', '.join(f'{b}={getattr(self, b)!r}' for b in bad)}")

    def max_iter(self, n_sites: int) -> int:
        """Default CG iteration cap: 10 * sqrt(N_s) + 100."""
        return int(10 * math.sqrt(max(n_sites, 1)) + 100)

    def with_overrides(self, **kwargs: Any) -> 'SolverSettings':
        return replace(self, **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_env(cls, environ: Optional[Dict[str, str]] = None) -> 'SolverSettings':
        """
        Build settings from RECON_* environment variables.

        Args:
            environ (dict, optional): Mapping to read instead of os.environ

        Returns:
            SolverSettings: Defaults overridden by whatever variables are set

        Raises:
            ConfigError: If a variable cannot be parsed
        """
        environ = os.environ if environ is None else environ
        kwargs: Dict[str, Any] = {}
        for name, field_type in cls.__annotations__.items():
            var = f"RECON_{name.upper()}"
            raw = environ.get(var)
            if raw is None or raw == '':
                continue
            parse: Callable[[str], Any] = int if field_type == 'int' else float
            try:
                kwargs[name] = parse(raw)
            except ValueError as e:
                raise ConfigError(f"Environment variable {var}={raw!r} is not a valid {field_type}") from e
        if kwargs and logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"Solver settings overridden from environment: {kwargs}")
        return cls(**kwargs)
