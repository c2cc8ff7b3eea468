"""End-to-end experiment orchestration.

Three mask-production configurations are evaluated per user and image:

  A: absolute threshold on the normalized score map;
  B: Gaussian filter at pixel scale, then a dynamic-range threshold;
  C: Gaussian filter, two-level trimap, GrabCut.

Scores come either from the simulated classifier (mode "sim") or from the
full synthetic-signal chain (mode "synthsig": recordings -> conditioning ->
epochs -> features -> SVM decision scores). Cross-validation covers every
image exactly once: test folds of ``test_fold_size`` images (a 22-image set
yields 5/5/5/5/2) with parameters learned on each fold's complement.

All randomness flows from one seed through named integer streams, so reports
are byte-identical across reruns and across parallelism settings.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import synthsig
from .classify import (
    ScoreSimSpec,
    SvmModel,
    decision_scores,
    grid_search_cv,
    simulate_window_scores,
    train_svm,
)
from .dataset import DatasetSpec, generate_dataset
from .eegmap import (
    EEGMap,
    average_maps,
    gaussian_filter,
    make_trimap,
    map_from_scores,
    normalize_map,
    threshold_absolute,
    threshold_relative,
)
from .errors import EegsegError, EmptyForeground, InvalidSpec, TooFewPixels
from .grabcut import run_grabcut
from .imaging import BinaryMask, Image, jaccard, label_windows, partition_grid
from .optimize import LearnedParams, ParamSpace, learn_alpha, learn_filter_params, random_search

# named seed streams; every derived generator seeds from
# SeedSequence(entropy=base_seed, spawn_key=(stream, *ids))
_STREAM_DATA = 1
_STREAM_SIM = 2
_STREAM_REC = 3
_STREAM_SEARCH = 4
_STREAM_GRABCUT = 5

SCHEMA_VERSION = 1
DISPLAY_SECONDS_PER_IMAGE = 43.4


def derived_seed(base_seed: int, *key: int) -> int:
    """Stable 32-bit seed for a named stream; independent of call order."""
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; serializes to versioned JSON."""

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    grid_cols: int = 16
    grid_rows: int = 12
    min_overlap: float = 0.0
    mode: str = "sim"                      # "sim" | "synthsig"
    users: int = 1
    score_sim: tuple = (ScoreSimSpec(),)   # one spec per user (recycled if short)
    recording: synthsig.RecordingSpec = field(default_factory=synthsig.RecordingSpec)
    reference_channel: int = 0
    band: tuple = (0.1, 70.0)
    epoch_rate: float = 250.0
    feature_window: tuple = (0.2, 0.9)
    feature_rate: float = 20.0
    svm_c: float = 1.0
    svm_gamma: float = 0.003
    svm_use_grid: bool = False
    svm_c_grid: tuple = (0.1, 1.0, 10.0, 100.0)
    svm_gamma_grid: tuple = (1e-4, 1e-3, 1e-2, 1e-1)  # divided by feature dim
    space: ParamSpace = field(default_factory=ParamSpace)
    test_fold_size: int = 5
    grabcut_iterations: int = 3
    grabcut_k: int = 5
    grabcut_lambda: float = 50.0
    n_sigma: int = 70
    n_p: int = 100
    sigma_max: float = 70.0
    fusion_params: tuple | None = None     # fixed (p1, p2, sigma) for fusion runs
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("sim", "synthsig"):
            raise InvalidSpec(f"mode must be 'sim' or 'synthsig', got {self.mode!r}")
        if self.users < 1:
            raise InvalidSpec("users must be >= 1")
        if self.test_fold_size < 1 or self.test_fold_size >= self.dataset.n_images:
            raise InvalidSpec("test_fold_size must be in [1, n_images)")
        if self.dataset.width % self.grid_cols or self.dataset.height % self.grid_rows:
            raise InvalidSpec(
                f"{self.dataset.width}x{self.dataset.height} images are not divisible "
                f"by a {self.grid_cols}x{self.grid_rows} grid"
            )
        if isinstance(self.score_sim, ScoreSimSpec):
            self.score_sim = (self.score_sim,)
        else:
            self.score_sim = tuple(self.score_sim)
        if not self.score_sim:
            raise InvalidSpec("score_sim must hold at least one spec")

    def sim_spec(self, user: int) -> ScoreSimSpec:
        return self.score_sim[user % len(self.score_sim)]

    # ---------------------------------------------------------------- JSON
    def to_json_dict(self) -> dict:
        doc = {
            "schema": SCHEMA_VERSION,
            "dataset": asdict(self.dataset),
            "grid_cols": self.grid_cols,
            "grid_rows": self.grid_rows,
            "min_overlap": self.min_overlap,
            "mode": self.mode,
            "users": self.users,
            "score_sim": [asdict(s) for s in self.score_sim],
            "recording": asdict(self.recording),
            "reference_channel": self.reference_channel,
            "band": list(self.band),
            "epoch_rate": self.epoch_rate,
            "feature_window": list(self.feature_window),
            "feature_rate": self.feature_rate,
            "svm_c": self.svm_c,
            "svm_gamma": self.svm_gamma,
            "svm_use_grid": self.svm_use_grid,
            "svm_c_grid": list(self.svm_c_grid),
            "svm_gamma_grid": list(self.svm_gamma_grid),
            "space": {
                "sigma_range": list(self.space.sigma_range),
                "p1_range": list(self.space.p1_range),
                "p2_range": list(self.space.p2_range),
                "n_trials": self.space.n_trials,
            },
            "test_fold_size": self.test_fold_size,
            "grabcut_iterations": self.grabcut_iterations,
            "grabcut_k": self.grabcut_k,
            "grabcut_lambda": self.grabcut_lambda,
            "n_sigma": self.n_sigma,
            "n_p": self.n_p,
            "sigma_max": self.sigma_max,
            "fusion_params": list(self.fusion_params) if self.fusion_params else None,
            "seed": self.seed,
        }
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentConfig":
        if doc.get("schema") != SCHEMA_VERSION:
            raise InvalidSpec(f"unsupported config schema {doc.get('schema')!r}")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known - {"schema"}
        if extra:
            raise InvalidSpec(f"unknown config fields: {sorted(extra)}")
        kwargs = {}
        for name, value in doc.items():
            if name == "schema":
                continue
            if name == "dataset":
                value = DatasetSpec(**{**value, "area_fraction": tuple(value["area_fraction"])})
            elif name == "recording":
                v = dict(value)
                v["noise_band"] = tuple(v["noise_band"])
                if v.get("channel_gains") is not None:
                    v["channel_gains"] = tuple(v["channel_gains"])
                value = synthsig.RecordingSpec(**v)
            elif name == "score_sim":
                value = tuple(ScoreSimSpec(**s) for s in value)
            elif name == "space":
                value = ParamSpace(
                    sigma_range=tuple(value["sigma_range"]),
                    p1_range=tuple(value["p1_range"]),
                    p2_range=tuple(value["p2_range"]),
                    n_trials=int(value["n_trials"]),
                )
            elif name in ("band", "feature_window", "svm_c_grid", "svm_gamma_grid"):
                value = tuple(value)
            elif name == "fusion_params" and value is not None:
                value = tuple(value)
            kwargs[name] = value
        return cls(**kwargs)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


# --------------------------------------------------------------------------
# map construction
# --------------------------------------------------------------------------

def window_grids(cfg: ExperimentConfig, gts) -> list:
    grid = partition_grid((cfg.dataset.width, cfg.dataset.height), (cfg.grid_cols, cfg.grid_rows))
    return [label_windows(grid, gt, cfg.min_overlap) for gt in gts]


def build_sim_map(cfg: ExperimentConfig, labeled_grid, user: int, image: int) -> EEGMap:
    scores = simulate_window_scores(
        labeled_grid.flat_labels(), cfg.sim_spec(user),
        derived_seed(cfg.seed, _STREAM_SIM, user, image),
    )
    return normalize_map(map_from_scores(labeled_grid, scores))


def build_sim_maps(cfg: ExperimentConfig, grids) -> list[list[EEGMap]]:
    """maps[user][image]; deterministic per (seed, user, image)."""
    return [
        [build_sim_map(cfg, g, user, image) for image, g in enumerate(grids)]
        for user in range(cfg.users)
    ]


def window_features(cfg: ExperimentConfig, labeled_grid, user: int, image: int):
    """Full synthetic-signal chain for one displayed image.

    Returns (features, labels) aligned to window index order: feature k
    describes window k of the grid.
    """
    labels = labeled_grid.flat_labels()
    rec, order = synthsig.labeled_recording(
        labels, cfg.recording, derived_seed(cfg.seed, _STREAM_REC, user, image)
    )
    rec = synthsig.reference_and_filter(rec, cfg.reference_channel, cfg.band)
    rec = synthsig.subsample(rec, target_rate=cfg.epoch_rate)
    epochs = synthsig.extract_epochs(rec)
    vectors = [synthsig.build_features(e, cfg.feature_window, cfg.feature_rate) for e in epochs]
    dim = len(vectors[0])
    feats = np.zeros((labels.size, dim))
    for k, vec in enumerate(vectors):
        feats[order[k]] = vec.values
    return feats, labels


def train_window_classifier(cfg: ExperimentConfig, features, labels,
                            seed_key: tuple = ()) -> SvmModel:
    """Train (optionally grid-searched) SVM on stacked window features."""
    x = np.vstack(features)
    y = np.concatenate(labels)
    if cfg.svm_use_grid:
        dim = x.shape[1]
        gammas = [g / dim for g in cfg.svm_gamma_grid]
        c, g, _ = grid_search_cv(
            x, y, cfg.svm_c_grid, gammas,
            seed=derived_seed(cfg.seed, _STREAM_REC, 9999, *seed_key),
        )
    else:
        c, g = cfg.svm_c, cfg.svm_gamma
    return train_svm(x, y, c, g)


def model_map(model: SvmModel, features, labeled_grid) -> EEGMap:
    scores = decision_scores(model, features)
    return normalize_map(map_from_scores(labeled_grid, scores))


# --------------------------------------------------------------------------
# configurations A / B / C
# --------------------------------------------------------------------------

def run_config(config_id: str, maps, images, gts, params: LearnedParams,
               grabcut_opts: dict | None = None, seed: int = 0):
    """Apply one configuration to each image; returns (masks, jaccards).

    Configuration C records an empty mask (and its Jaccard) when the trimap
    has no foreground band or too few seed pixels for the color models.
    """
    if config_id not in ("A", "B", "C"):
        raise InvalidSpec(f"config_id must be A, B, or C, got {config_id!r}")
    opts = {"iterations": 3, "k": 5, "lam": 50.0}
    opts.update(grabcut_opts or {})
    masks = []
    scores = []
    for idx, (m, img, gt) in enumerate(zip(maps, images, gts)):
        if config_id == "A":
            mask = threshold_absolute(m, params.alpha)
        elif config_id == "B":
            mask = threshold_relative(gaussian_filter(m, params.filter_sigma), params.filter_p)
        else:
            filtered = gaussian_filter(m, params.trimap_sigma)
            try:
                tri = make_trimap(filtered, params.trimap_p1, params.trimap_p2)
                mask = run_grabcut(
                    img, tri, iterations=opts["iterations"], k=opts["k"],
                    lam=opts["lam"], seed=derived_seed(seed, _STREAM_GRABCUT, idx),
                )
            except (EmptyForeground, TooFewPixels):
                mask = BinaryMask(np.zeros(gt.bits.shape, dtype=bool))
        masks.append(mask)
        scores.append(jaccard(mask, gt))
    return masks, scores


def config_c_objective(maps, images, gts, grabcut_opts: dict, seed: int):
    """Mean-Jaccard error of the filter -> trimap -> GrabCut chain.

    Total over the whole parameter space: a trial whose trimap cannot seed
    GrabCut on some image scores the worst error, 1.0.
    """

    def objective(p1: float, p2: float, sigma: float) -> float:
        total = 0.0
        for idx, (m, img, gt) in enumerate(zip(maps, images, gts)):
            filtered = gaussian_filter(m, sigma)
            try:
                tri = make_trimap(filtered, p1, p2)
                mask = run_grabcut(
                    img, tri, iterations=grabcut_opts["iterations"],
                    k=grabcut_opts["k"], lam=grabcut_opts["lam"],
                    seed=derived_seed(seed, _STREAM_GRABCUT, idx),
                )
            except (EmptyForeground, TooFewPixels):
                return 1.0
            total += jaccard(mask, gt)
        return 1.0 - total / len(maps)

    return objective


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------

def fold_layout(n_images: int, test_fold_size: int, seed: int) -> list[np.ndarray]:
    """Shuffled test folds covering every image exactly once.

    A 22-image set with fold size 5 gives test folds of 5/5/5/5/2; parameters
    are always learned on each fold's complement.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_DATA, 1)))
    order = rng.permutation(n_images)
    return [order[k : k + test_fold_size] for k in range(0, n_images, test_fold_size)]


def _learn_fold_params(cfg, fold_id, user, train_maps, train_images, train_gts) -> LearnedParams:
    gc_opts = {
        "iterations": cfg.grabcut_iterations,
        "k": cfg.grabcut_k,
        "lam": cfg.grabcut_lambda,
    }
    alpha = learn_alpha(train_maps, train_gts)
    filt_p, filt_sigma = learn_filter_params(
        train_maps, train_gts, n_sigma=cfg.n_sigma, n_p=cfg.n_p, sigma_max=cfg.sigma_max
    )
    objective = config_c_objective(
        train_maps, train_images, train_gts, gc_opts,
        seed=derived_seed(cfg.seed, _STREAM_GRABCUT, fold_id, user),
    )
    p1, p2, sigma_c, _err = random_search(
        objective, cfg.space, seed=derived_seed(cfg.seed, _STREAM_SEARCH, fold_id, user)
    )
    return LearnedParams(
        alpha=alpha, filter_p=filt_p, filter_sigma=filt_sigma,
        trimap_p1=p1, trimap_p2=p2, trimap_sigma=sigma_c,
        fold=fold_id, user=user,
    )


def _fold_user_task(cfg: ExperimentConfig, fold_id: int, user: int,
                    train_idx, test_idx, images, gts, grids, sim_maps):
    """Learn parameters on the training images, evaluate A/B/C on the test fold."""
    if cfg.mode == "sim":
        user_maps = sim_maps[user]
    else:
        feats = [window_features(cfg, grids[i], user, i) for i in range(len(images))]
        model = train_window_classifier(
            cfg, [feats[i][0] for i in train_idx], [feats[i][1] for i in train_idx],
            seed_key=(fold_id, user),
        )
        user_maps = [model_map(model, f, g) for (f, _), g in zip(feats, grids)]

    train_maps = [user_maps[i] for i in train_idx]
    test_maps = [user_maps[i] for i in test_idx]
    params = _learn_fold_params(
        cfg, fold_id, user,
        train_maps, [images[i] for i in train_idx], [gts[i] for i in train_idx],
    )
    gc_opts = {
        "iterations": cfg.grabcut_iterations,
        "k": cfg.grabcut_k,
        "lam": cfg.grabcut_lambda,
    }
    cells = []
    for config_id in ("A", "B", "C"):
        _, scores = run_config(
            config_id, test_maps, [images[i] for i in test_idx],
            [gts[i] for i in test_idx], params, gc_opts,
            seed=derived_seed(cfg.seed, _STREAM_GRABCUT, fold_id, user),
        )
        for local, image_idx in enumerate(test_idx):
            cells.append({
                "fold": fold_id,
                "user": user,
                "image": int(image_idx),
                "config": config_id,
                "jaccard": float(scores[local]),
            })
    return params.to_dict(), cells


@dataclass
class SegmentationReport:
    """Per-cell Jaccard results plus learned parameters and aggregates."""

    meta: dict
    params: list
    cells: list

    def aggregates(self) -> dict:
        by_config = {}
        for cell in self.cells:
            by_config.setdefault(cell["config"], []).append(cell["jaccard"])
        out = {}
        for config, values in sorted(by_config.items()):
            arr = np.asarray(values, dtype=float)
            out[config] = {
                "mean": float(arr.mean()),
                "std": float(arr.std()),
                "count": int(arr.size),
            }
        return out

    def config_mean(self, config: str) -> float:
        return self.aggregates()[config]["mean"]

    def to_json(self, path) -> None:
        doc = {
            "meta": self.meta,
            "params": self.params,
            "aggregates": self.aggregates(),
            "cells": self.cells,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "SegmentationReport":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(meta=doc["meta"], params=doc["params"], cells=doc["cells"])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fold", "user", "image", "config", "jaccard"])
            ordered = sorted(
                self.cells, key=lambda c: (c["fold"], c["user"], c["image"], c["config"])
            )
            for cell in ordered:
                writer.writerow([cell["fold"], cell["user"], cell["image"],
                                 cell["config"], repr(cell["jaccard"])])

    def verify_aggregates(self, stored: dict, tol: float = 1e-12) -> bool:
        fresh = self.aggregates()
        if set(fresh) != set(stored):
            return False
        for config, agg in fresh.items():
            for key in ("mean", "std"):
                if abs(agg[key] - stored[config][key]) > tol:
                    return False
            if agg["count"] != stored[config]["count"]:
                return False
        return True


def run_crossval(cfg: ExperimentConfig, jobs: int = 1, data=None) -> SegmentationReport:
    """Learn on each fold's complement, evaluate A/B/C on its test images."""
    if data is None:
        data = generate_dataset(cfg.dataset, derived_seed(cfg.seed, _STREAM_DATA, 0))
    images = [img for img, _ in data]
    gts = [gt for _, gt in data]
    grids = window_grids(cfg, gts)
    sim_maps = build_sim_maps(cfg, grids) if cfg.mode == "sim" else None
    folds = fold_layout(len(images), cfg.test_fold_size, cfg.seed)
    all_idx = np.arange(len(images))

    tasks = []
    for fold_id, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(all_idx, test_idx)
        for user in range(cfg.users):
            tasks.append((fold_id, user, train_idx, test_idx))

    if jobs == 1:
        results = [
            _fold_user_task(cfg, fold_id, user, train_idx, test_idx,
                            images, gts, grids, sim_maps)
            for fold_id, user, train_idx, test_idx in tasks
        ]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=jobs)(
            delayed(_fold_user_task)(cfg, fold_id, user, train_idx, test_idx,
                                     images, gts, grids, sim_maps)
            for fold_id, user, train_idx, test_idx in tasks
        )

    params = [r[0] for r in results]
    cells = [cell for r in results for cell in r[1]]
    cells.sort(key=lambda c: (c["fold"], c["user"], c["image"], c["config"]))
    meta = {
        "schema": SCHEMA_VERSION,
        "kind": "crossval",
        "seed": cfg.seed,
        "mode": cfg.mode,
        "users": cfg.users,
        "n_images": len(images),
        "fold_sizes": [int(len(f)) for f in folds],
        "fold_note": (
            "each image appears in exactly one test fold; fold sizes follow "
            "test_fold_size with a smaller final fold when the image count "
            "does not divide evenly"
        ),
        "display_seconds_per_image": DISPLAY_SECONDS_PER_IMAGE,
    }
    return SegmentationReport(meta=meta, params=params, cells=cells)


# --------------------------------------------------------------------------
# multi-user fusion
# --------------------------------------------------------------------------

def fusion_params_from_report(report: SegmentationReport) -> tuple[float, float, float]:
    """Average the trimap parameters across folds and users."""
    p1 = float(np.mean([p["trimap_p1"] for p in report.params]))
    p2 = float(np.mean([p["trimap_p2"] for p in report.params]))
    sigma = float(np.mean([p["trimap_sigma"] for p in report.params]))
    return p1, p2, sigma


def run_fusion(cfg: ExperimentConfig, data=None, params=None) -> SegmentationReport:
    """Average per-user maps into one map per image, then run configuration C.

    The same (p1, p2, sigma) triple drives both the fused and the single-user
    segmentations so the comparison isolates the effect of map averaging.
    With one user the fused run degenerates to that user's configuration C.
    Parameters come from, in order: the ``params`` argument, cfg.fusion_params,
    or a crossval run whose trimap parameters are averaged over folds/users.
    """
    if data is None:
        data = generate_dataset(cfg.dataset, derived_seed(cfg.seed, _STREAM_DATA, 0))
    images = [img for img, _ in data]
    gts = [gt for _, gt in data]
    grids = window_grids(cfg, gts)

    if cfg.mode == "sim":
        maps = build_sim_maps(cfg, grids)
    else:
        maps = []
        for user in range(cfg.users):
            feats = [window_features(cfg, grids[i], user, i) for i in range(len(images))]
            model = train_window_classifier(
                cfg, [f for f, _ in feats], [l for _, l in feats], seed_key=(user,)
            )
            maps.append([model_map(model, f, g) for (f, _), g in zip(feats, grids)])

    if params is None:
        params = cfg.fusion_params
    if params is None:
        params = fusion_params_from_report(run_crossval(cfg, data=data))
    p1, p2, sigma = params
    learned = LearnedParams(trimap_p1=p1, trimap_p2=p2, trimap_sigma=sigma)
    gc_opts = {
        "iterations": cfg.grabcut_iterations,
        "k": cfg.grabcut_k,
        "lam": cfg.grabcut_lambda,
    }

    fused_maps = [
        average_maps([maps[user][image] for user in range(cfg.users)])
        for image in range(len(images))
    ]
    _, fused_scores = run_config(
        "C", fused_maps, images, gts, learned, gc_opts,
        seed=derived_seed(cfg.seed, _STREAM_GRABCUT, 7001),
    )

    cells = []
    single = np.zeros((cfg.users, len(images)))
    for user in range(cfg.users):
        _, scores = run_config(
            "C", maps[user], images, gts, learned, gc_opts,
            seed=derived_seed(cfg.seed, _STREAM_GRABCUT, 7002, user),
        )
        single[user] = scores
        for image, value in enumerate(scores):
            cells.append({
                "fold": 0,
                "user": user,
                "image": image,
                "config": "C_single",
                "jaccard": float(value),
            })
    for image, value in enumerate(fused_scores):
        cells.append({
            "fold": 0,
            "user": -1,
            "image": image,
            "config": "C_fused",
            "jaccard": float(value),
        })
    cells.sort(key=lambda c: (c["fold"], c["user"], c["image"], c["config"]))

    single_mean = single.mean(axis=0)
    meta = {
        "schema": SCHEMA_VERSION,
        "kind": "fusion",
        "seed": cfg.seed,
        "mode": cfg.mode,
        "users": cfg.users,
        "n_images": len(images),
        "params": {"p1": p1, "p2": p2, "sigma": sigma},
        "fused_mean": float(np.mean(fused_scores)),
        "single_user_mean": float(single_mean.mean()),
        "fused_wins": int(np.sum(np.asarray(fused_scores) > single_mean)),
        "best_single_per_image": [float(v) for v in single.max(axis=0)],
        "display_seconds_per_image": DISPLAY_SECONDS_PER_IMAGE,
    }
    return SegmentationReport(
        meta=meta,
        params=[learned.to_dict()],
        cells=cells,
    )
