"""Procedure planning with a transition graph and a differentiable Viterbi layer."""

from .dvl import SmoothConfig, compose_soft_plan, dvl_backward, dvl_forward, s_argmax, s_max, soft_plan
from .graph import (
    ActionTaxonomy,
    GraphError,
    SequenceCorpus,
    TransitionMatrix,
    build_graph,
    corrupt_graph,
    coverage,
    load_graph,
    save_graph,
)
from .metrics import (
    EvalReport,
    bootstrap_compare,
    bootstrap_paired,
    bootstrap_single,
    evaluate_plans,
    mean_accuracy,
    miou_mask,
    miou_set,
    success_rate,
)
from .model import TABLE_CONFIGS, NetConfig, PlanModel, TrainConfig, infer_plan, infer_plans, train
from .synth import PlanDataset, SyntheticWorld, extract_subhorizon, generate_world, sample_instances, split, subsample
from .viterbi import DiscretePlan, beam_search, brute_force_best, viterbi_decode

__version__ = "0.1.0"

__all__ = [
    "ActionTaxonomy",
    "beam_search",
    "bootstrap_compare",
    "bootstrap_paired",
    "bootstrap_single",
    "brute_force_best",
    "build_graph",
    "compose_soft_plan",
    "corrupt_graph",
    "coverage",
    "DiscretePlan",
    "dvl_backward",
    "dvl_forward",
    "EvalReport",
    "evaluate_plans",
    "extract_subhorizon",
    "generate_world",
    "GraphError",
    "infer_plan",
    "infer_plans",
    "load_graph",
    "mean_accuracy",
    "miou_mask",
    "miou_set",
    "NetConfig",
    "PlanDataset",
    "PlanModel",
    "s_argmax",
    "s_max",
    "sample_instances",
    "save_graph",
    "SequenceCorpus",
    "SmoothConfig",
    "soft_plan",
    "split",
    "subsample",
    "success_rate",
    "SyntheticWorld",
    "TABLE_CONFIGS",
    "train",
    "TrainConfig",
    "TransitionMatrix",
    "viterbi_decode",
]
