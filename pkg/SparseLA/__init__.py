from .ilu import IluPreconditioner, ilu_decompose, as_sparse_spd
from .cg import CgResult, cg_solve, FillSchedule, SpdSolve, solve_spd, default_max_iter

__all__ = ['IluPreconditioner', 'ilu_decompose', 'as_sparse_spd', 'CgResult', 'cg_solve',
           'FillSchedule', 'SpdSolve', 'solve_spd', 'default_max_iter']
