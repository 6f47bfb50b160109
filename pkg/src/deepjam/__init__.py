"""Deep joint alignment of quasi-periodic multivariate functions."""
from .estimator import DeepJAM, check_functions
from .grid import (
    FunctionSample,
    Grid,
    PeriodStructure,
    SrsfSample,
    Warp,
    WarpError,
    compose_warps,
    extend_function,
    extend_warp,
    invert_warp,
    scale_warp,
    split,
    srsf,
    srsf_inverse,
    warp_function,
    warp_srsf,
)
from .jam import (
    AlignmentResult,
    JamConfig,
    align_new,
    apply_warps,
    center_warps,
    decompose_total_warp,
    extract_common_template,
    run_deepjam,
    subject_template,
)
from .metrics import VarianceReport, ccsv, mean_template_distance, reduction
from .simgen import SimConfig, SimDataset, scenario1, scenario2, simulate
from .sphere import KarcherConfig, KarcherResult, OrthantError, exp_map, inv_exp_map, karcher_mean_warps
from .warpnet import NetConfig, WarpNet, fisher_rao_loss, load_checkpoint, save_checkpoint, simplex_activation

__version__ = "0.1.0"
