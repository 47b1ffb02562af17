"""Mixtures of experts for functional predictors and scalar responses.

Three fitters share one EM backbone: plain maximum likelihood (`fit_fme`),
l1-regularized (`fit_fme_lasso`), and the derivative-sparse interpretable
variant (`fit_ifme`), plus the data simulator, prediction/clustering metrics,
and model-selection utilities.
"""

from .basis import (
    BSplineBasis,
    CurveSample,
    DerivativeMatrices,
    TimeGrid,
    cross_gram,
    derivative_matrices,
    eval_basis,
    even_grid,
    make_bspline_basis,
    project_curve,
    reconstruct_function,
)
from .designs import BasisConfig, DesignSet, build_designs, extend_for_ifme
from .fme import (
    ExpertParams,
    FitOptions,
    FitReport,
    FmeModel,
    GatingParams,
    e_step,
    fit_fme,
    fme_density,
    gating_probs,
    log_likelihood,
    m_step,
)
from .ifme import (
    DerivativeSpec,
    IfmeExpertParams,
    IfmeGatingParams,
    IfmeModel,
    e_step_ifme,
    fit_ifme,
    ifme_density,
    ifme_penalty,
    reconstruct_networks,
)
from .lasso import LassoPenalty, fit_fme_lasso, penalized_loglik, penalty_value
from .metrics import (
    MetricReport,
    adjusted_rand,
    cluster_error,
    corr,
    df_and_mbic,
    functional_mse,
    map_cluster,
    predict_conditional,
    predict_response,
    rand_index,
    rpe,
    sse,
)
from .optim import (
    LinearProgram,
    LpSolution,
    coord_lasso,
    dantzig_lp_build,
    dantzig_solve,
    soft_threshold,
    softmax_gating_q,
    solve_lp,
    weighted_ols,
)
from .selection import grid_search, kfold_cv
from .simulate import (
    ScenarioConfig,
    SimulatedDataset,
    TrueNetworks,
    add_noise,
    default_networks,
    gen_labels,
    gen_predictors,
    gen_responses,
    simulate_dataset,
)

__version__ = "0.1.0"
