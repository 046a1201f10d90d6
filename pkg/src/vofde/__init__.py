"""Toolkit for variable-order fractional dynamics with learnable orders.

Solves D^{alpha(t,x)} x(t) = f(t, x(t)) on uniform grids with derivative-form
(L1) and integral-form (fractional Euler, optionally corrected) steppers,
differentiates through the unrolled schemes with a small reverse-mode tape,
and builds two applications on top: an inverse solver that learns the order
of a logistic growth model, and desk-scale variable-order graph diffusion for
node classification.
"""

from .errors import (
    ConfigError,
    DivergenceError,
    DomainError,
    FormatError,
    NumericError,
    OptimizerError,
    ShapeError,
    TrainingError,
    VofdeError,
)
from .frac_core import (
    WeightRow,
    abm_weights,
    caputo_power_term,
    corrector_weights,
    digamma,
    gamma,
    l1_weights,
    mittag_leffler,
)
from .autodiff import ParamStore, Tape, Tensor, grad_check
from .nn import AdamState, Mlp, adam_step, load_params, mlp_forward, save_params
from .order_fn import (
    ConstantOrder,
    GridInterpOrder,
    StateNetOrder,
    TimeNetOrder,
    eval_order,
    make_order_model,
    order_trace,
    sinusoidal_embed,
)
from .solvers import (
    Scheme,
    SolverConfig,
    Trajectory,
    convergence_probe,
    linear_rhs,
    solve,
    solve_abm_pc,
    solve_abm_predictor,
    solve_l1,
    zero_rhs,
)
from .fde_inverse import (
    LossReport,
    MultiTermProblem,
    PowerSeriesModel,
    equation_residual,
    train_vp,
    train_vp_with_state,
    vp_network_residual,
    vp_rhs,
    zeta_k,
)
from .graph_dyn import (
    DiffusionOperator,
    GraphSpec,
    attention_matrix,
    generate_sbm,
    grand_l_rhs,
    grand_nl_rhs,
    load_graph_csv,
    normalized_operator,
    save_graph_csv,
    train_node_classifier,
)

__version__ = "0.1.0"
