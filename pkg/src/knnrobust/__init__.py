"""Robustness evaluation toolkit for approximate K-nearest-neighbor search."""

from .analysis import PcaModel, ScatterTable, fit_pca, project, tp_fp_scatter
from .attack import (
    AgentConfig,
    AttackState,
    EpisodeStep,
    EpisodeTrace,
    JitterSpace,
    PolicyNets,
    RobustnessReport,
    a2c_losses,
    act,
    apply_action,
    compute_reward,
    evaluate_jitters,
    make_agent,
    robustness_report,
    run_episode,
    sample_jitters,
)
from .balltree import BallTree, build_balltree, query_balltree
from .bench import BenchRun, pareto_table, run_bench
from .core import (
    FpLabel,
    IndexSpec,
    QueryResult,
    build,
    label_fp,
    parse_spec,
    query,
)
from .errors import FormatError, TrainingDiverged, ValidationError
from .kdforest import KdForest, build_kdforest, query_kdforest
from .nn import AdamState, Mlp, adam_step, backward, forward, init_adam, init_mlp
from .vecdata import (
    GroundTruth,
    VectorSet,
    exact_ground_truth,
    load_ground_truth,
    load_vectors,
    make_synthetic,
    save_ground_truth,
    save_vectors,
    split_train_query,
)

__version__ = "0.1.0"
