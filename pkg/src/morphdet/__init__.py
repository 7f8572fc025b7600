"""Generalizable morph attack detection at desk scale: synthetic landmarked
face corpora, morph-wise augmentations, a multi-level detector trained with
prediction- and embedding-level consistency, and biometric evaluation."""

from .bioeval import ScoreSet, apcer_at_bpcer, auc, det_curve, eer, report, score_dataset
from .estimator import JpegCycle, MorphDetector, PrintScan, StyleMixup
from .grlnet import BackboneSpec, DiscriminatorBank, GRLNet, forward_levels, strip_inference
from .morphkit import MorphSpec, TransformOp, cross_morph, delaunay, pre_augment, self_morph, warp_blend
from .postops import jpeg_cycle, print_scan_sim
from .regloss import LossWeights, js_divergence, kl_divergence, tempered_softmax
from .samples import FaceSample, LandmarkSet, read_manifest, write_corpus
from .stylemix import StyleSpec, color_wct, fourier_mix, ism_augment
from .synthface import CorpusConfig, IdentityParams, NuisanceParams, build_corpus, render_face, sample_identity
from .trainer import PairedBatch, TrainConfig, ablate, fit, make_pairs, train_step

__version__ = "0.1.0"

__all__ = [
    "BackboneSpec",
    "CorpusConfig",
    "DiscriminatorBank",
    "FaceSample",
    "GRLNet",
    "IdentityParams",
    "JpegCycle",
    "LandmarkSet",
    "LossWeights",
    "MorphDetector",
    "MorphSpec",
    "NuisanceParams",
    "PairedBatch",
    "PrintScan",
    "ScoreSet",
    "StyleMixup",
    "StyleSpec",
    "TrainConfig",
    "TransformOp",
    "ablate",
    "apcer_at_bpcer",
    "auc",
    "build_corpus",
    "color_wct",
    "cross_morph",
    "delaunay",
    "det_curve",
    "eer",
    "fit",
    "forward_levels",
    "fourier_mix",
    "ism_augment",
    "jpeg_cycle",
    "js_divergence",
    "kl_divergence",
    "make_pairs",
    "pre_augment",
    "print_scan_sim",
    "read_manifest",
    "render_face",
    "report",
    "sample_identity",
    "score_dataset",
    "self_morph",
    "strip_inference",
    "tempered_softmax",
    "train_step",
    "warp_blend",
    "write_corpus",
]
