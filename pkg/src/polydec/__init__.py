"""Decoupling polynomial nonlinear state-space models into univariate branches."""

from .model import (
    MonomialBasis, PolynomialMap, BranchPolynomial, DecoupledMap,
    StateSpaceModel, Dataset, SimResult, ParamVector,
    eval_monomials, eval_branches, eval_nl, simulate, apply_state_transform,
    e_rms, cost_vls, pack, unpack, count_dof,
)
from .benchmarks import (
    MultisineSpec, VdpParams, BoucWenParams, DuffingParams,
    multisine, add_output_noise, vdp_truth, simulate_vdp,
    simulate_bouc_wen, bouc_wen_linear, simulate_duffing,
)
from .decoupling import (
    OperatingPointSet, JacobianTensor, CpdOptions, CpdFactors,
    DecoupleOptions, DecoupleResult,
    sample_operating_points, analytic_jacobian, build_jacobian_tensor,
    cpd_als, e_cpd, kruskal_ok, fit_branches, estimate_rank, decouple,
)
from .reduction import (
    FunctionErrorReport, UnifyReport, RemovalCandidate, RemovalReport,
    function_outputs, function_error, unify_branches, remove_branch, reduce_to,
)
from .finetune import (
    LmOptions, FinetuneTrace,
    stability_guard, output_jacobian, levenberg_marquardt, trace_to_csv,
)
from .classify import (
    ClassifyOptions, ClassificationResult,
    finite_difference_derivative, decompose_z, classify, classify_model,
)
from .persist import (
    SchemaError, model_to_dict, model_from_dict,
    save_model, load_model, save_map, load_map, save_dataset, load_dataset,
)
from .pipeline import (
    PipelineConfig, StepRecord, ReductionReport,
    run_pipeline, generate_records, export_spectrum,
)

__version__ = "0.1.0"
