"""Regression models mapping the nine-feature vector to (BR, HR), plus metrics.

Three model kinds trained from scratch for full determinism and a portable
binary file format: ridge-stabilized least squares, inverse-distance-weighted
k-nearest-neighbors, and a variance-reduction random forest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ModelFormatError, ShapeError
from .features import FEATURE_ORDER, FeatureVector

MODEL_KINDS = ("linear", "knn", "random_forest")

_KIND_CODES = {"linear": 0, "knn": 1, "random_forest": 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}

_RIDGE_DEFAULT = 1e-8
_RIDGE_ESCALATED = 1e-4
_KNN_K = 5
_RF_TREES = 100
_RF_FEATURES_PER_SPLIT = 3   # ceil(sqrt(9))
_RF_MIN_LEAF = 2
_TREE_TAG = 0x54524545


@dataclass(frozen=True)
class LabeledSample:
    """One feature vector with ground-truth rates in BRPM / BPM."""

    features: FeatureVector
    br_brpm: float
    hr_bpm: float

    def __post_init__(self):
        if not 3.0 <= self.br_brpm <= 36.0:
            raise ShapeError(f"br_brpm {self.br_brpm} outside [3, 36]")
        if not 48.0 <= self.hr_bpm <= 120.0:
            raise ShapeError(f"hr_bpm {self.hr_bpm} outside [48, 120]")


@dataclass(frozen=True)
class Metrics:
    """Coefficient of determination and mean absolute error."""

    r2: float
    mae: float
    r2_defined: bool = True


def evaluate(preds, labels) -> Metrics:
    """R^2 = 1 - sum((z - zhat)^2) / sum((z - zbar)^2); MAE = mean |z - zhat|.

    Zero label variance makes R^2 undefined; it is then reported as 0 with
    r2_defined=False.
    """
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape or preds.ndim != 1 or len(preds) < 1:
        raise ShapeError(
            f"predictions and labels must be equal-length 1-D arrays of length >= 1, "
            f"got {preds.shape} and {labels.shape}")
    mae = float(np.abs(preds - labels).mean())
    ss_res = float(((labels - preds) ** 2).sum())
    ss_tot = float(((labels - labels.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return Metrics(r2=0.0, mae=mae, r2_defined=False)
    return Metrics(r2=1.0 - ss_res / ss_tot, mae=mae)


# ---------------------------------------------------------------------------
# Model internals

@dataclass
class _LinearModel:
    coef: np.ndarray     # intercept first, then one weight per standardized feature
    ridge_escalated: bool

    def predict(self, xs: np.ndarray) -> np.ndarray:
        return self.coef[0] + xs @ self.coef[1:]


@dataclass
class _KnnModel:
    k: int
    train_x: np.ndarray  # standardized
    train_y: np.ndarray

    def predict(self, xs: np.ndarray) -> np.ndarray:
        d2 = ((xs[:, None, :] - self.train_x[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        dist = np.sqrt(np.take_along_axis(d2, order, axis=1))
        weights = 1.0 / (dist + 1e-12)
        neighbor_y = self.train_y[order]
        return (weights * neighbor_y).sum(axis=1) / weights.sum(axis=1)


@dataclass
class _Tree:
    feature: np.ndarray    # int16, -1 for leaves
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    value: np.ndarray      # float64 leaf means

    def predict(self, xs: np.ndarray) -> np.ndarray:
        node = np.zeros(len(xs), dtype=np.int32)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            feats = self.feature[node[idx]]
            goes_left = xs[idx, feats] <= self.threshold[node[idx]]
            node[idx] = np.where(goes_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return self.value[node]


@dataclass
class _ForestModel:
    trees: list

    def predict(self, xs: np.ndarray) -> np.ndarray:
        acc = np.zeros(len(xs))
        for tree in self.trees:
            acc += tree.predict(xs)
        return acc / len(self.trees)


def _fit_linear(x: np.ndarray, y: np.ndarray) -> _LinearModel:
    n, p = x.shape
    design = np.concatenate([np.ones((n, 1)), x], axis=1)
    gram = design.T @ design
    rhs = design.T @ y
    penalty = np.eye(p + 1)
    penalty[0, 0] = 0.0  # leave the intercept unpenalized
    coef = None
    escalated = False
    for ridge in (_RIDGE_DEFAULT, _RIDGE_ESCALATED):
        try:
            candidate = np.linalg.solve(gram + ridge * penalty, rhs)
        except np.linalg.LinAlgError:
            candidate = None
        if candidate is not None and np.all(np.isfinite(candidate)):
            coef = candidate
            escalated = ridge == _RIDGE_ESCALATED
            break
        escalated = True
    if coef is None:
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        escalated = True
    return _LinearModel(coef=coef, ridge_escalated=escalated)


def _best_split(xs, ys, feat_candidates):
    """Best (feature, threshold) by squared-error reduction, or None."""
    n = len(ys)
    total_sum = ys.sum()
    best = None
    best_score = 0.0
    for f in feat_candidates:
        order = np.argsort(xs[:, f], kind="stable")
        xv = xs[order, f]
        yv = ys[order]
        csum = np.cumsum(yv)
        left_n = np.arange(1, n)
        valid = xv[1:] > xv[:-1]
        left_n_f = left_n.astype(np.float64)
        left_sum = csum[:-1]
        right_sum = total_sum - left_sum
        # SSE reduction = sum_l^2/n_l + sum_r^2/n_r - sum^2/n (constant dropped)
        score = left_sum**2 / left_n_f + right_sum**2 / (n - left_n_f)
        score = np.where(valid, score, -np.inf)
        ok = (left_n >= _RF_MIN_LEAF) & (n - left_n >= _RF_MIN_LEAF)
        score = np.where(ok, score, -np.inf)
        if not np.any(np.isfinite(score)):
            continue
        i = int(np.argmax(score))
        gain = score[i] - total_sum**2 / n
        if best is None or gain > best_score + 1e-12:
            best_score = gain
            best = (f, 0.5 * (xv[i] + xv[i + 1]))
    if best is None or best_score <= 1e-12:
        return None
    return best


def _fit_tree(xs, ys, rng) -> _Tree:
    feature: list = []
    threshold: list = []
    left: list = []
    right: list = []
    value: list = []
    # Iterative build; stack holds (sample index array, node slot).
    stack = [(np.arange(len(ys)), _new_node(feature, threshold, left, right, value))]
    while stack:
        idx, slot = stack.pop()
        sub_y = ys[idx]
        split = None
        if len(idx) >= 2 * _RF_MIN_LEAF and not np.all(sub_y == sub_y[0]):
            feats = rng.choice(xs.shape[1], size=min(_RF_FEATURES_PER_SPLIT, xs.shape[1]),
                               replace=False)
            split = _best_split(xs[idx], sub_y, np.sort(feats))
        if split is None:
            value[slot] = float(sub_y.mean())
            continue
        f, thr = split
        go_left = xs[idx, f] <= thr
        feature[slot] = f
        threshold[slot] = thr
        left[slot] = _new_node(feature, threshold, left, right, value)
        right[slot] = _new_node(feature, threshold, left, right, value)
        # Push right first so the left child is processed (and numbered) first.
        stack.append((idx[~go_left], right[slot]))
        stack.append((idx[go_left], left[slot]))
    return _Tree(
        feature=np.asarray(feature, dtype=np.int16),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
    )


def _new_node(feature, threshold, left, right, value) -> int:
    feature.append(-1)
    threshold.append(0.0)
    left.append(-1)
    right.append(-1)
    value.append(0.0)
    return len(feature) - 1


def _fit_forest(x, y, seed, target_tag) -> _ForestModel:
    trees = []
    for t in range(_RF_TREES):
        rng = np.random.default_rng((seed, _TREE_TAG, target_tag, t))
        boot = rng.integers(0, len(y), size=len(y))
        trees.append(_fit_tree(x[boot], y[boot], rng))
    return _ForestModel(trees=trees)


# ---------------------------------------------------------------------------
# Public training / prediction API

@dataclass
class TrainedModel:
    """A fitted regressor for one target plus the shared standardization."""

    kind: str
    target: str                 # "br" or "hr"
    feature_means: np.ndarray
    feature_stds: np.ndarray
    seed: int
    split: float
    inner: object

    def predict(self, features) -> np.ndarray:
        """Predict rates (BRPM or BPM) for an (n, 9) array or FeatureVector list."""
        xs = _as_matrix(features)
        xs = (xs - self.feature_means) / self.feature_stds
        return self.inner.predict(xs)


@dataclass
class TrainResult:
    br_model: TrainedModel
    hr_model: TrainedModel
    br_metrics: Metrics
    hr_metrics: Metrics


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        mat = np.asarray(features, dtype=np.float64)
        if mat.ndim == 1:
            mat = mat[None, :]
    else:
        mat = np.stack([f.as_array() for f in features])
    if mat.shape[1] != len(FEATURE_ORDER):
        raise ShapeError(f"expected {len(FEATURE_ORDER)} features, got {mat.shape[1]}")
    return mat


def train_model(dataset, kind: str, split: float = 0.8, seed: int = 0) -> TrainResult:
    """Train BR and HR regressors on a seeded shuffled split of the dataset.

    linear: least squares via normal equations with ridge 1e-8 (escalated to
    1e-4 and flagged if singular); knn: k=5 on standardized features with
    inverse-distance weights; random_forest: 100 bootstrapped trees,
    3 candidate features per split, variance-reduction splitting, min leaf 2.
    Held-out metrics come from the (1 - split) fraction.
    """
    if kind not in MODEL_KINDS:
        raise ShapeError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    if len(dataset) < 10:
        raise ShapeError(f"training needs >= 10 samples, got {len(dataset)}")
    if not 0.0 < split < 1.0:
        raise ShapeError(f"split must be in (0, 1), got {split}")

    x = np.stack([s.features.as_array() for s in dataset])
    y_br = np.array([s.br_brpm for s in dataset])
    y_hr = np.array([s.hr_bpm for s in dataset])

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(dataset))
    n_train = min(max(int(round(split * len(dataset))), 1), len(dataset) - 1)
    train_idx, test_idx = perm[:n_train], perm[n_train:]

    means = x[train_idx].mean(axis=0)
    stds = x[train_idx].std(axis=0)
    stds = np.where(stds > 0.0, stds, 1.0)
    xs_train = (x[train_idx] - means) / stds
    xs_test = (x[test_idx] - means) / stds

    def fit(y, target, tag):
        if kind == "linear":
            inner = _fit_linear(xs_train, y[train_idx])
        elif kind == "knn":
            inner = _KnnModel(k=min(_KNN_K, n_train), train_x=xs_train, train_y=y[train_idx])
        else:
            inner = _fit_forest(xs_train, y[train_idx], seed, tag)
        model = TrainedModel(kind=kind, target=target, feature_means=means,
                             feature_stds=stds, seed=int(seed), split=float(split),
                             inner=inner)
        metrics = evaluate(inner.predict(xs_test), y[test_idx])
        return model, metrics

    br_model, br_metrics = fit(y_br, "br", 0)
    hr_model, hr_metrics = fit(y_hr, "hr", 1)
    return TrainResult(br_model=br_model, hr_model=hr_model,
                       br_metrics=br_metrics, hr_metrics=hr_metrics)


# ---------------------------------------------------------------------------
# Binary model file: magic "VSMDL001", kind byte, little-endian parameter blobs

MODEL_MAGIC = b"VSMDL001"


def _pack_inner(model: TrainedModel) -> bytes:
    inner = model.inner
    if model.kind == "linear":
        return struct.pack("<BH", int(inner.ridge_escalated), len(inner.coef)) + \
            inner.coef.astype("<f8").tobytes()
    if model.kind == "knn":
        head = struct.pack("<HQ", inner.k, len(inner.train_y))
        return head + inner.train_x.astype("<f8").tobytes() + \
            inner.train_y.astype("<f8").tobytes()
    parts = [struct.pack("<H", len(inner.trees))]
    for tree in inner.trees:
        parts.append(struct.pack("<I", len(tree.feature)))
        parts.append(tree.feature.astype("<i2").tobytes())
        parts.append(tree.threshold.astype("<f8").tobytes())
        parts.append(tree.left.astype("<i4").tobytes())
        parts.append(tree.right.astype("<i4").tobytes())
        parts.append(tree.value.astype("<f8").tobytes())
    return b"".join(parts)


def _unpack_inner(kind: str, blob: bytes, n_features: int):
    if kind == "linear":
        escalated, n_coef = struct.unpack_from("<BH", blob, 0)
        coef = np.frombuffer(blob, dtype="<f8", count=n_coef, offset=3)
        return _LinearModel(coef=coef.astype(np.float64), ridge_escalated=bool(escalated))
    if kind == "knn":
        k, n = struct.unpack_from("<HQ", blob, 0)
        off = 10
        train_x = np.frombuffer(blob, dtype="<f8", count=n * n_features, offset=off)
        off += 8 * n * n_features
        train_y = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
        return _KnnModel(k=k, train_x=train_x.reshape(n, n_features).astype(np.float64),
                         train_y=train_y.astype(np.float64))
    (n_trees,) = struct.unpack_from("<H", blob, 0)
    off = 2
    trees = []
    for _ in range(n_trees):
        (n_nodes,) = struct.unpack_from("<I", blob, off)
        off += 4
        feature = np.frombuffer(blob, dtype="<i2", count=n_nodes, offset=off)
        off += 2 * n_nodes
        threshold = np.frombuffer(blob, dtype="<f8", count=n_nodes, offset=off)
        off += 8 * n_nodes
        left = np.frombuffer(blob, dtype="<i4", count=n_nodes, offset=off)
        off += 4 * n_nodes
        right = np.frombuffer(blob, dtype="<i4", count=n_nodes, offset=off)
        off += 4 * n_nodes
        value = np.frombuffer(blob, dtype="<f8", count=n_nodes, offset=off)
        off += 8 * n_nodes
        trees.append(_Tree(feature=feature.astype(np.int16),
                           threshold=threshold.astype(np.float64),
                           left=left.astype(np.int32), right=right.astype(np.int32),
                           value=value.astype(np.float64)))
    return _ForestModel(trees=trees)


def save_models(result: TrainResult, path) -> None:
    """Write the BR + HR model pair as one versioned little-endian binary."""
    br, hr = result.br_model, result.hr_model
    if br.kind != hr.kind:
        raise ModelFormatError("BR and HR models must share a kind")
    n_feat = len(FEATURE_ORDER)
    header = MODEL_MAGIC + struct.pack("<BqdH", _KIND_CODES[br.kind], br.seed,
                                       br.split, n_feat)
    header += br.feature_means.astype("<f8").tobytes()
    header += br.feature_stds.astype("<f8").tobytes()
    body = b""
    for model in (br, hr):
        blob = _pack_inner(model)
        body += struct.pack("<Q", len(blob)) + blob
    with open(path, "wb") as fh:
        fh.write(header + body)


def load_models(path) -> tuple[TrainedModel, TrainedModel]:
    """Read a model file back into (br_model, hr_model)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MODEL_MAGIC) + 19:
        raise ModelFormatError(f"model file truncated at {len(data)} bytes")
    if data[:8] != MODEL_MAGIC:
        raise ModelFormatError(
            f"bad magic at byte 0: expected {MODEL_MAGIC!r}, got {data[:8]!r}")
    kind_code, seed, split, n_feat = struct.unpack_from("<BqdH", data, 8)
    if kind_code not in _CODE_KINDS:
        raise ModelFormatError(f"unknown model kind byte {kind_code} at byte 8")
    if n_feat != len(FEATURE_ORDER):
        raise ModelFormatError(f"model has {n_feat} features, expected {len(FEATURE_ORDER)}")
    kind = _CODE_KINDS[kind_code]
    off = 8 + 19
    means = np.frombuffer(data, dtype="<f8", count=n_feat, offset=off).astype(np.float64)
    off += 8 * n_feat
    stds = np.frombuffer(data, dtype="<f8", count=n_feat, offset=off).astype(np.float64)
    off += 8 * n_feat
    models = []
    for target in ("br", "hr"):
        if off + 8 > len(data):
            raise ModelFormatError(f"model file truncated at byte {off}: missing {target} blob")
        (blob_len,) = struct.unpack_from("<Q", data, off)
        off += 8
        if off + blob_len > len(data):
            raise ModelFormatError(
                f"model file truncated at byte {off}: {target} blob wants {blob_len} bytes, "
                f"{len(data) - off} remain")
        inner = _unpack_inner(kind, data[off:off + blob_len], n_feat)
        off += blob_len
        models.append(TrainedModel(kind=kind, target=target, feature_means=means,
                                   feature_stds=stds, seed=seed, split=split, inner=inner))
    return models[0], models[1]
