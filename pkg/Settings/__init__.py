from .config import SolverSettings

__all__ = ['SolverSettings']
