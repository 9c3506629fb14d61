"""Glue between datasets, detectors and scored-channel sets."""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence

import numpy as np

from .detect import ed_scores, si_ed_scores
from .errors import InvalidConfig
from .eval import ScoredSet
from .ml import GmmModel, KnnModel, SvmModel, gmm_fit, gmm_score, knn_fit, knn_score, svm_fit, svm_score
from .nn import Params, TrainConfig, predict_logits, train
from .spectrogram import FeatureMode, extract_channels, feature_matrix
from .synth import Dataset, LabeledCase, balanced_channel_sample

DETECTORS = ("ed", "si-ed", "knn", "svm", "gmm", "cnn3", "lstm")

Scorer = Callable[[np.ndarray], np.ndarray]


def make_scorer(model) -> Scorer:
    """Map an (n, 134, 46) dBm stack to one score per channel (larger means SPN-43 more likely).

    Networks score with the logit, which ranks like the probability without
    its saturation ties.
    """
    if isinstance(model, dict):
        name = model.get("model")
        if name == "ed":
            return ed_scores
        if name == "si-ed":
            return si_ed_scores
        raise InvalidConfig(f"unknown detector {name!r}")
    if isinstance(model, Params):
        return lambda X: predict_logits(model, X)
    if isinstance(model, KnnModel):
        return lambda X: np.asarray(knn_score(model, feature_matrix(X, model.feature_mode or "full")))
    if isinstance(model, SvmModel):
        return lambda X: np.asarray(svm_score(model, feature_matrix(X, model.feature_mode or "full")))
    if isinstance(model, GmmModel):
        return lambda X: np.asarray(gmm_score(model, feature_matrix(X, model.feature_mode or "full")))
    raise InvalidConfig(f"cannot score with {type(model).__name__}")


def fit_detector(name: str, X: np.ndarray, y: np.ndarray, features: str = "full", seed: int = 0,
                 train_cfg: TrainConfig | None = None, k: int = 9, C: float = 1.0, kernel: str = "linear",
                 svm_solver: str | None = None):
    if name not in DETECTORS:
        raise InvalidConfig(f"detector must be one of {DETECTORS}")
    if name in ("ed", "si-ed"):
        return {"model": name}
    if name in ("cnn3", "lstm"):
        cfg = train_cfg or TrainConfig(seed=seed)
        return train(name, X, y, cfg).params
    F = feature_matrix(X, features)
    mode = FeatureMode(features).value
    if name == "knn":
        return knn_fit(F, y, k, feature_mode=mode)
    if name == "svm":
        return svm_fit(F, y, kernel, C, solver=svm_solver, seed=seed, feature_mode=mode)
    return gmm_fit(F, y, seed=seed, feature_mode=mode)


def case_channels(dataset: Dataset, case: LabeledCase) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(stack, channel MHz, labels) for one case."""
    chans = dataset.channels(case)
    X = np.stack([c.values for c in chans])
    mhz = np.array([c.center_mhz for c in chans])
    return X, mhz, np.array([case.channel_labels[m] for m in mhz], dtype=bool)


def score_scenes(scenes: Iterable, scorer: Scorer) -> ScoredSet:
    """Score every channel of (spectrogram, case) pairs."""
    ids, mhz, scores, labels = [], [], [], []
    for sg, case in scenes:
        chans = extract_channels(sg, parent_id=case.case_id)
        X = np.stack([c.values for c in chans])
        s = np.asarray(scorer(X), dtype=np.float64)
        for c, v in zip(chans, s):
            ids.append(case.case_id)
            mhz.append(c.center_mhz)
            scores.append(float(v))
            labels.append(case.channel_labels[c.center_mhz])
    return ScoredSet(ids, mhz, scores, labels)


def dataset_scenes(dataset: Dataset, cases: Sequence[LabeledCase]):
    for c in cases:
        yield dataset.spectrogram(c.case_id), c


def training_channels(dataset: Dataset, cases: Sequence[LabeledCase], n_channels: int, seed: int):
    return balanced_channel_sample(dataset_scenes(dataset, cases), n_channels, seed=seed)


def survey_scored(observations, schedule: dict, scorer: Scorer) -> ScoredSet:
    """Score survey observations against their truth schedule (for threshold calibration)."""
    ids, mhz, scores, labels = [], [], [], []
    for t, chans in observations:
        s = np.asarray(scorer(np.stack([c.values for c in chans])), dtype=np.float64)
        for c, v in zip(chans, s):
            ids.append(f"obs{t:06d}")
            mhz.append(c.center_mhz)
            scores.append(float(v))
            labels.append(bool(schedule[c.center_mhz][t]))
    return ScoredSet(ids, mhz, scores, labels)
