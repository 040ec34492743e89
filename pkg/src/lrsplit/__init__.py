"""Low-rank splitting integrators for large, stiff matrix Lyapunov and Riccati ODEs."""

from .baselines import (
    KPIKConfig,
    LowRankFactor,
    be_dense_dle_step,
    be_kpik_dle_step,
    dopri5_dense,
    kpik_ale_solve,
    richardson2,
    solve_be_kpik,
)
from .dlr import GDRE, Constant, Custom, Nonlinearity, Riccati, ksl_step, ksl_step_sym
from .errors import (
    BlowUpError,
    ContractError,
    DivergenceError,
    LowRankError,
    RefusalError,
    SingularError,
    StiffnessError,
)
from .expmv import ExpmvConfig, expm_action, propagate_linear_flow
from .lyapunov import DLEProblem, lie_step_dle, solve_dle, strang_step_dle
from .matcore import GenLowRank, SymLowRank, kron_lyap_solve, qr_thin, svd_truncate, sym_truncate
from .metrics import defect_psd, defect_sym, error_scaled, fit_order, scaled_fro_norm
from .problems import ProblemSpec, build_diffadv_operator, build_heat_operator, heat_dle_spec, lqr_dre_spec
from .report import SolveReport
from .riccati import DREProblem, LQRSpec, are_residual, lqr_to_dre, solve_dre

__version__ = "0.1.0"
