"""Salience-aware scene graph generation on synthetic scenes.

numpy-only reverse-mode autodiff, an iterative salience decoder with
geometry- and predicate-biased attention, unbiased predicate training,
salience re-ranking, and scene-graph metrics including a
pairwise-localization AP.
"""

from .tensor import Tensor, grad_check
from .geometry import Box, iou, giou, pairwise_iou, box_encoding
from .matching import solve, detr_match_cost, Assignment
from .labels import (build_salience_labels, build_predicate_labels,
                     DEFAULT_SALIENCE_THRESHOLD)
from .losses import focal_loss, seesaw_loss, total_loss, SeesawState
from .decoder import PredicateDecoder
from .isd import IterativeSalienceDecoder, refine
from .metrics import (ScoredTriplet, MetricReport, recall_at_k,
                      mean_recall_at_k, f_at_k, pl_ap, evaluate_dataset)
from .ranking import score_triplets, rerank_external
from .scenes import (SceneConfig, GroundTruthGraph, DetectedEntities,
                     generate_scene, generate_scenes, detector_stub,
                     PREDICATE_NAMES)
from .trainer import (TrainConfig, SalienceModel, train, evaluate,
                      save_model, load_model)
from .checkpoint import save_checkpoint, load_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Tensor", "grad_check", "Box", "iou", "giou", "pairwise_iou",
    "box_encoding", "solve", "detr_match_cost", "Assignment",
    "build_salience_labels", "build_predicate_labels",
    "DEFAULT_SALIENCE_THRESHOLD", "focal_loss", "seesaw_loss", "total_loss",
    "SeesawState", "PredicateDecoder", "IterativeSalienceDecoder", "refine",
    "ScoredTriplet", "MetricReport", "recall_at_k", "mean_recall_at_k",
    "f_at_k", "pl_ap", "evaluate_dataset", "score_triplets",
    "rerank_external", "SceneConfig", "GroundTruthGraph", "DetectedEntities",
    "generate_scene", "generate_scenes", "detector_stub", "PREDICATE_NAMES",
    "TrainConfig", "SalienceModel", "train", "evaluate", "save_model",
    "load_model", "save_checkpoint", "load_checkpoint",
]
