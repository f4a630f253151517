"""
Purpose: Whole-image inference and segmentation metrics

High-level Overview:
Runs the trained network over whole images by tiling them with the patch grid,
averaging the class probabilities of overlapping tiles. Predictions reduce to a
vessel mask (argmax in the vessel classes; boundary classes count as
background) and to a vessel score p(thick) + p(thin) for ROC analysis.
Sensitivity, specificity and accuracy are computed inside the field of view.
AUC is reported for all vessels and separately for thick and thin vessels.

Key Components:
- Tile/stitch inference with count-based averaging
- Confusion counts with exact (Fraction) and float rates
- ROC curve and AUC through scikit-learn, ties credited one half
- Thin/thick stratified AUC against all non-vessel pixels
- Per-image, pooled ("ALL") and mean metric rows

Functions/Classes:
- `class ProbabilityMap`: Stitched 5-class probabilities (and side maps)
- `class ConfusionCounts`: TP/FN/TN/FP tallies and rates
- `class RocCurve`: Operating points and area
- `class StratifiedAuc`: (all, thick, thin) AUC triple
- `predict_image(img, params, stride, ...)`: Stitched prediction
- `binarize(p)`: Vessel mask from class probabilities
- `confusion(pred, gt, fov)`: Counts over the FOV
- `roc_auc(scores, labels)`: ROC curve and AUC
- `stratified_auc(p, gt, fov)`: AUC per vessel stratum
- `predict_file(path, params, run)`: Load, enhance and predict one image file
- `predict_entry(entry, params, run)`: The same for a manifest entry
- `evaluate_entries(entries, params, run)`: Metrics table for a split
"""

import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import auc, roc_curve

from .dataio import BinaryMask, FundusImage, ManifestEntry, load_image, load_mask
from .errors import ArgumentError, ShapeError
from .labelgen import THICK, THIN, ClassMap, build_class_map
from .network import NetConfig, ParamStore, ResidualUNet, make_context
from .preprocess import GrayImage, pad_to_patch, patch_origins, to_gray_clahe

if TYPE_CHECKING:
    from .runconfig import RunConfig

METRIC_COLUMNS = ["image", "Acc", "Sp", "Se", "AUC", "AUC_thick", "AUC_thin"]


@dataclass
class ProbabilityMap:
    """Fused 5-class probabilities of shape (5, H, W); optional side maps of the same shape."""
    probs: np.ndarray
    sides: List[np.ndarray] = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.probs.shape[1]

    @property
    def width(self) -> int:
        return self.probs.shape[2]

    def vessel_score(self) -> np.ndarray:
        return self.probs[THICK] + self.probs[THIN]


@dataclass
class ConfusionCounts:
    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fn + other.fn, self.tn + other.tn, self.fp + other.fp)

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    @staticmethod
    def _ratio(num: int, den: int) -> float:
        return num / den if den else float("nan")

    @property
    def sensitivity(self) -> float:
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self) -> float:
        return self._ratio(self.tn, self.tn + self.fp)

    @property
    def accuracy(self) -> float:
        return self._ratio(self.tp + self.tn, self.total)

    def rates(self) -> Tuple[float, float, float]:
        """(Sp, Se, Acc); zero denominators give NaN."""
        return self.specificity, self.sensitivity, self.accuracy

    def exact_rates(self) -> Tuple[Optional[Fraction], Optional[Fraction], Optional[Fraction]]:
        """(Sp, Se, Acc) as fractions; zero denominators give None."""
        def frac(num, den):
            return Fraction(num, den) if den else None
        return (frac(self.tn, self.tn + self.fp), frac(self.tp, self.tp + self.fn),
                frac(self.tp + self.tn, self.total))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


class StratifiedAuc(NamedTuple):
    all: float
    thick: float
    thin: float


def predict_image(img: GrayImage, params: ParamStore, stride: int = 48, patch: int = 96,
                  cfg: Optional[NetConfig] = None, batch_size: int = 8,
                  include_sides: bool = False) -> ProbabilityMap:
    """Tile, run the eval-mode network, average overlaps and renormalize.

    Pixels covered by a single tile keep that tile's probabilities unchanged.
    """
    if not 1 <= stride <= patch:
        raise ArgumentError(f"stride must lie in [1, {patch}], got {stride}")
    if batch_size < 1:
        raise ArgumentError(f"batch size must be >= 1, got {batch_size}")
    cfg = cfg or NetConfig.from_store(params)
    net = ResidualUNet(cfg)
    ctx = make_context("eval", cfg)

    gray = pad_to_patch(img.data, patch)
    tiles = [(row, col) for row in patch_origins(gray.shape[0], patch, stride)
             for col in patch_origins(gray.shape[1], patch, stride)]
    n_maps = 1 + (cfg.stages if include_sides else 0)
    sums = np.zeros((n_maps, cfg.num_classes) + gray.shape, dtype=params.dtype)
    counts = np.zeros(gray.shape, dtype=np.int32)

    for start in range(0, len(tiles), batch_size):
        chunk = tiles[start:start + batch_size]
        x = np.stack([gray[r:r + patch, c:c + patch] for r, c in chunk])[:, None].astype(params.dtype)
        outputs = net.forward(params, x, ctx)
        maps = [outputs.fused] + (outputs.sides if include_sides else [])
        for i, (r, c) in enumerate(chunk):
            for m, prob in enumerate(maps):
                sums[m, :, r:r + patch, c:c + patch] += prob[i]
            counts[r:r + patch, c:c + patch] += 1

    overlap = counts > 1
    stitched = sums / np.maximum(counts, 1).astype(sums.dtype)
    if overlap.any():
        region = stitched[:, :, overlap]
        stitched[:, :, overlap] = region / region.sum(axis=1, keepdims=True)
    stitched = stitched[:, :, :img.height, :img.width]
    return ProbabilityMap(probs=np.ascontiguousarray(stitched[0]),
                          sides=[np.ascontiguousarray(s) for s in stitched[1:]])


def binarize(p: ProbabilityMap) -> BinaryMask:
    """Vessel iff the argmax class is thick or thin; ties go to the lower class index."""
    winner = np.argmax(p.probs, axis=0)
    return BinaryMask((winner == THICK) | (winner == THIN))


def _fov_array(fov: Optional[BinaryMask], shape) -> np.ndarray:
    if fov is None:
        return np.ones(shape, dtype=bool)
    if fov.shape != tuple(shape):
        raise ShapeError(f"FOV mask {fov.shape} does not match {tuple(shape)}")
    return fov.data


def confusion(pred: BinaryMask, gt: BinaryMask, fov: Optional[BinaryMask] = None) -> ConfusionCounts:
    """Pixel tallies inside the FOV (the whole raster when no FOV is given)."""
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    inside = _fov_array(fov, gt.shape)
    p, g = pred.data[inside], gt.data[inside]
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        fn=int(np.count_nonzero(~p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
        fp=int(np.count_nonzero(p & ~g)),
    )


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> RocCurve:
    """ROC over every distinct score; the trapezoidal area equals the Mann-Whitney statistic."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores but {labels.size} labels")
    positives = int(labels.sum())
    if positives == 0 or positives == labels.size:
        raise ArgumentError("ROC needs at least one positive and one negative label")
    fpr, tpr, thresholds = roc_curve(labels, scores, drop_intermediate=False)
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=float(auc(fpr, tpr)))


def _auc_or_nan(scores: np.ndarray, positive: np.ndarray, negative: np.ndarray) -> float:
    if not positive.any() or not negative.any():
        return float("nan")
    keep = positive | negative
    return roc_auc(scores[keep], positive[keep]).auc


def stratified_auc(p: ProbabilityMap, gt: ClassMap, fov: Optional[BinaryMask] = None) -> StratifiedAuc:
    """AUC with positives = vessels, thick vessels only, thin vessels only.

    Negatives are all non-vessel pixels (boundary classes included) inside the FOV.
    An empty stratum gives NaN.
    """
    if gt.shape != (p.height, p.width):
        raise ShapeError(f"class map {gt.shape} does not match prediction {(p.height, p.width)}")
    inside = _fov_array(fov, gt.shape)
    scores = p.vessel_score()[inside]
    labels = gt.data[inside]
    vessel = gt.vessels().data[inside]
    thick, thin = labels == THICK, labels == THIN
    negative = ~vessel
    return StratifiedAuc(
        all=_auc_or_nan(scores, vessel, negative),
        thick=_auc_or_nan(scores, thick, negative),
        thin=_auc_or_nan(scores, thin, negative),
    )


def predict_entry(entry: ManifestEntry, params: ParamStore, run: "RunConfig",
                  include_sides: bool = False) -> Tuple[FundusImage, ProbabilityMap, float]:
    """Predict the image of a manifest entry."""
    return predict_file(entry.image, params, run, include_sides)


def predict_file(path: Path, params: ParamStore, run: "RunConfig",
                 include_sides: bool = False) -> Tuple[FundusImage, ProbabilityMap, float]:
    """Load and enhance one image and predict it; returns (image, probabilities, seconds)."""
    image = load_image(path)
    started = time.perf_counter()
    gray = to_gray_clahe(image, run.pre.clahe_tiles, run.pre.clahe_clip)
    cfg = NetConfig.from_store(params, dropout=run.net.dropout,
                               bn_eps=run.net.bn_eps, bn_momentum=run.net.bn_momentum)
    prob = predict_image(gray, params, run.eval.stride, run.pre.patch_size, cfg,
                         run.eval.batch_size, include_sides)
    return image, prob, time.perf_counter() - started


@dataclass
class ImageEvaluation:
    name: str
    counts: ConfusionCounts
    aucs: StratifiedAuc
    seconds: float
    scores: np.ndarray = field(repr=False, default=None)
    strata: np.ndarray = field(repr=False, default=None)

    def row(self) -> Dict[str, object]:
        sp, se, acc = self.counts.rates()
        return {"image": self.name, "Acc": acc, "Sp": sp, "Se": se,
                "AUC": self.aucs.all, "AUC_thick": self.aucs.thick, "AUC_thin": self.aucs.thin}


def evaluate_entry(entry: ManifestEntry, params: ParamStore, run: "RunConfig") -> ImageEvaluation:
    image, prob, seconds = predict_entry(entry, params, run)
    vessels = load_mask(entry.ground_truth)
    if vessels.shape != (image.height, image.width):
        raise ShapeError(f"{entry.ground_truth}: mask {vessels.shape} does not match image")
    fov = load_mask(entry.fov) if (run.eval.use_fov and entry.fov is not None) else None
    # strata always use the edge-aware split, whatever scheme the model was trained with
    classes = build_class_map(vessels, run.label.band_radius, "edge_aware")
    inside = _fov_array(fov, vessels.shape)
    return ImageEvaluation(
        name=entry.stem,
        counts=confusion(binarize(prob), vessels, fov),
        aucs=stratified_auc(prob, classes, fov),
        seconds=seconds,
        scores=prob.vessel_score()[inside],
        strata=classes.data[inside],
    )


def pooled_row(results: Sequence[ImageEvaluation]) -> Dict[str, object]:
    """Metrics over the union of all evaluated pixels."""
    counts = ConfusionCounts()
    for result in results:
        counts = counts + result.counts
    scores = np.concatenate([r.scores for r in results])
    strata = np.concatenate([r.strata for r in results])
    thick, thin = strata == THICK, strata == THIN
    negative = ~(thick | thin)
    sp, se, acc = counts.rates()
    return {"image": "ALL", "Acc": acc, "Sp": sp, "Se": se,
            "AUC": _auc_or_nan(scores, thick | thin, negative),
            "AUC_thick": _auc_or_nan(scores, thick, negative),
            "AUC_thin": _auc_or_nan(scores, thin, negative)}


def evaluate_entries(entries: Sequence[ManifestEntry], params: ParamStore, run: "RunConfig",
                     on_image: Optional[Callable[[ImageEvaluation], None]] = None
                     ) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Per-image rows followed by the pooled "ALL" and "mean" rows, plus a timing table."""
    if not entries:
        raise ArgumentError("no entries to evaluate")
    results = []
    for entry in entries:
        result = evaluate_entry(entry, params, run)
        logging.info(f"Evaluated {result.name}: AUC={result.aucs.all:.4f} in {result.seconds:.2f}s")
        results.append(result)
        if on_image is not None:
            on_image(result)

    per_image = pd.DataFrame([r.row() for r in results], columns=METRIC_COLUMNS)
    mean = {"image": "mean", **per_image[METRIC_COLUMNS[1:]].mean(skipna=True).to_dict()}
    metrics = pd.DataFrame([r.row() for r in results] + [pooled_row(results), mean], columns=METRIC_COLUMNS)
    timing = pd.DataFrame({"image": [r.name for r in results], "seconds": [r.seconds for r in results]})
    return metrics, timing
