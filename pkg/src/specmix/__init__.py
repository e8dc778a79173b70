"""specmix: spectral moment estimation for mixture and topic models,
with pseudo-data regularization of the fit."""

from .adam import AdamParams, AdamState, adam_step
from .backend import BACKEND_NAME, COMPILED
from .decomposition import (
    DecompositionResult,
    EigenpairList,
    PowerMethodOptions,
    WhiteningPair,
    align_columns,
    aligned_error,
    decompose,
    reconstruct_parameters,
    simplex_project,
    tensor_power_method,
    whiten,
    whitened_third_moment,
)
from .models import (
    GmmModel,
    LdaModel,
    gmm_loglik,
    gmm_sample,
    heldout_eval,
    lda_sample,
    lda_surrogate_loglik,
)
from .moments import (
    Model,
    ModelConstants,
    MomentSet,
    combine_moments,
    gmm_estimate_sigma2,
    gmm_moments,
    lda_doc_statistics,
    lda_center_moments,
    lda_moments,
    lda_raw_moments,
)
from .pseudodata import (
    FitResult,
    FitTrace,
    GradientMode,
    PseudoDataConfig,
    fit_regularized,
    loss,
    loss_gradient,
)
from .regularizers import (
    AntiCorrelationReg,
    DirichletSparsityReg,
    GaussianPriorReg,
    TransferL2Reg,
    TreeDistanceReg,
    anti_correlation_reg,
    dirichlet_sparsity_reg,
    gaussian_prior_reg,
    transfer_l2_reg,
    tree_reg,
)
from .trees import HeadingTree, build_tree_distance, parse_heading_file, tree_distance

__version__ = "0.1.0"
