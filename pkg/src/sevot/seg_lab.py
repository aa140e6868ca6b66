"""Toy pixel-classification lab: synthetic street scenes, a small softmax
segmenter trained with cross-entropy or transport losses, and
conservative-label self-training."""

from __future__ import annotations

import copy
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import textio
from .ground_metric import GroundMatrix, MetricTransform, build_severity_matrix
from .ot_core import onehot_wasserstein, sinkhorn_potentials_batch

CLASS_NAMES = ("sky", "road", "sidewalk", "building", "car", "bus", "person", "bike")
N_CLASSES = len(CLASS_NAMES)

# Prototype colors are engineered so that car sits between bus (a mild
# mistake) and road (a severe one), and person between bike and sidewalk;
# under feature noise those are the genuinely ambiguous pixels.
PROTOTYPES = np.array(
    [
        [0.08, 0.45, 0.85],  # sky
        [0.30, 0.30, 0.32],  # road
        [0.52, 0.46, 0.42],  # sidewalk
        [0.72, 0.68, 0.62],  # building
        [0.46, 0.22, 0.24],  # car
        [0.62, 0.15, 0.15],  # bus
        [0.42, 0.56, 0.45],  # person
        [0.30, 0.64, 0.50],  # bike
    ]
)

# Mistakes that make the planner treat a non-drivable region as drivable
# (X -> road/sidewalk) are severe and asymmetric: the overcautious reverse
# direction is cheap.  Within-kind swaps (car/bus, person/bike) are nearly
# free, which is exactly the slack severity-aware training can exploit.
_SEVERITY_ENTRIES = {
    "sky": {"road": 1.0, "sidewalk": 1.0, "building": 0.5, "car": 1.0, "bus": 1.0, "person": 1.0, "bike": 1.0},
    "road": {"sky": 2.0, "sidewalk": 0.5, "building": 2.0, "car": 1.5, "bus": 1.5, "person": 2.0, "bike": 2.0},
    "sidewalk": {"sky": 2.0, "road": 3.0, "building": 2.0, "car": 1.5, "bus": 1.5, "person": 2.0, "bike": 2.0},
    "building": {"sky": 1.0, "road": 4.0, "sidewalk": 2.0, "car": 1.0, "bus": 1.0, "person": 1.0, "bike": 1.0},
    "car": {"sky": 6.0, "road": 6.0, "sidewalk": 5.0, "building": 2.0, "bus": 0.5, "person": 2.0, "bike": 2.0},
    "bus": {"sky": 6.0, "road": 6.0, "sidewalk": 5.0, "building": 2.0, "car": 0.5, "person": 2.0, "bike": 2.0},
    "person": {"sky": 10.0, "road": 10.0, "sidewalk": 9.0, "building": 2.0, "car": 2.0, "bus": 2.0, "bike": 0.5},
    "bike": {"sky": 8.0, "road": 8.0, "sidewalk": 7.0, "building": 2.0, "car": 2.0, "bus": 2.0, "person": 0.5},
}


def default_severity_matrix() -> GroundMatrix:
    """Hand-set severity table for the 8-class palette.

    Entry (i, j) is how bad it is to predict class j where class i is true:
    vulnerable classes predicted as drivable surface are worst, and
    mistaking one vehicle for another is nearly free.  Asymmetry is
    intentional (person->road far exceeds road->person).
    """
    idx = {name: k for k, name in enumerate(CLASS_NAMES)}
    entries = []
    for true_name, row in _SEVERITY_ENTRIES.items():
        for pred_name, cost in row.items():
            entries.append((idx[true_name], idx[pred_name], cost))
    return build_severity_matrix(N_CLASSES, entries, fill=1.0)


def training_severity_matrix(
    floor: float = 1.25,
    phantom_guard: float = 1.25,
    cap: float = 6.0,
) -> GroundMatrix:
    """Severity table calibrated for use as the one-hot loss ground metric.

    Starts from the transposed default table (the loss reads the true
    class's column, i.e. entry (i, j) prices predicting i when j is true),
    then caps the largest prices for stable SGD, adds a uniform floor to
    every mistake so decision boundaries stay crisp, and surcharges the
    phantom predictions (object or sidewalk hallucinated on true road, and
    vehicles hallucinated on true sidewalk) that would otherwise flood the
    wide surface bands.
    """
    idx = {name: k for k, name in enumerate(CLASS_NAMES)}
    offdiag = np.ones((N_CLASSES, N_CLASSES)) - np.eye(N_CLASSES)
    costs = np.minimum(default_severity_matrix().costs.T, cap) + floor * offdiag
    for pred in ("car", "bus", "sidewalk"):
        costs[idx[pred], idx["road"]] += phantom_guard
    for pred in ("car", "bus"):
        costs[idx[pred], idx["sidewalk"]] += phantom_guard
    return GroundMatrix(costs)


@dataclass(frozen=True)
class SceneConfig:
    height: int = 16
    width: int = 16
    noise: float = 0.12
    min_objects: int = 4
    max_objects: int = 7
    # constant offset added to the features (color-cast domain shift);
    # scalar broadcasts to all channels, a 3-tuple shifts per channel
    feature_shift: float | tuple = 0.0


@dataclass(frozen=True, eq=False)
class SceneSample:
    """One synthetic scene: per-pixel feature rows plus ground-truth labels."""

    features: np.ndarray  # (H, W, 3)
    labels: np.ndarray  # (H, W) int
    seed: int


def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> SceneSample:
    """Deterministic layered scene: sky/building/sidewalk/road bands plus a
    few object rectangles, with features = class prototype + Gaussian noise."""
    h, w = config.height, config.width
    if h <= 0 or w <= 0:
        raise ValueError("scene must have positive area")
    rng = np.random.default_rng(seed)
    labels = np.empty((h, w), dtype=np.int64)

    sky_end = max(1, int(0.18 * h) + int(rng.integers(-1, 2)))
    building_end = max(sky_end + 1, int(0.40 * h) + int(rng.integers(-1, 2)))
    sidewalk_end = max(building_end + 1, int(0.68 * h) + int(rng.integers(-1, 2)))
    sidewalk_end = min(sidewalk_end, h - 1)
    labels[:sky_end] = CLASS_NAMES.index("sky")
    labels[sky_end:building_end] = CLASS_NAMES.index("building")
    labels[building_end:sidewalk_end] = CLASS_NAMES.index("sidewalk")
    labels[sidewalk_end:] = CLASS_NAMES.index("road")

    n_objects = int(rng.integers(config.min_objects, config.max_objects + 1))
    for _ in range(n_objects):
        cls = CLASS_NAMES.index(rng.choice(("car", "bus", "person", "bike")))
        if cls in (CLASS_NAMES.index("car"), CLASS_NAMES.index("bus")):
            oh = int(rng.integers(2, 5))
            ow = int(rng.integers(3, 7))
            r0 = int(rng.integers(sidewalk_end, max(sidewalk_end + 1, h - oh + 1)))
        else:
            oh = int(rng.integers(2, 4))
            ow = int(rng.integers(1, 3))
            r0 = int(rng.integers(building_end, max(building_end + 1, h - oh + 1)))
        c0 = int(rng.integers(0, max(1, w - ow + 1)))
        labels[r0 : r0 + oh, c0 : c0 + ow] = cls

    features = (
        PROTOTYPES[labels]
        + np.asarray(config.feature_shift, dtype=float)
        + config.noise * rng.standard_normal((h, w, 3))
    )
    return SceneSample(features=features, labels=labels, seed=seed)


def make_dataset(seeds, config: SceneConfig = SceneConfig()) -> list[SceneSample]:
    return [generate_scene(int(s), config) for s in seeds]


# ---------------------------------------------------------------------------
# Softmax segmenter
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SoftmaxModel:
    """Per-pixel softmax classifier, optionally with one tanh hidden layer.

    The hidden activations are the penultimate features used for centroid
    computation and as the latent observation of the driving agent.
    """

    w2: np.ndarray
    b2: np.ndarray
    w1: np.ndarray | None = None
    b1: np.ndarray | None = None

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[0] if self.w1 is not None else self.w2.shape[0]

    @property
    def n_classes(self) -> int:
        return self.w2.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1] if self.w1 is not None else self.w2.shape[0]

    def params(self) -> dict:
        out = {"w2": self.w2, "b2": self.b2}
        if self.w1 is not None:
            out["w1"] = self.w1
            out["b1"] = self.b1
        return out

    def copy(self) -> SoftmaxModel:
        return copy.deepcopy(self)


def init_model(
    feature_dim: int = 3,
    n_classes: int = N_CLASSES,
    hidden: int = 16,
    seed: int = 0,
    scale: float = 0.5,
) -> SoftmaxModel:
    rng = np.random.default_rng(seed)
    if hidden > 0:
        w1 = scale * rng.standard_normal((feature_dim, hidden))
        b1 = np.zeros(hidden)
        w2 = scale * rng.standard_normal((hidden, n_classes))
    else:
        w1 = b1 = None
        w2 = scale * rng.standard_normal((feature_dim, n_classes))
    return SoftmaxModel(w2=w2, b2=np.zeros(n_classes), w1=w1, b1=b1)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def penultimate_flat(model: SoftmaxModel, x: np.ndarray) -> np.ndarray:
    if model.w1 is not None:
        return np.tanh(x @ model.w1 + model.b1)
    return x


def forward_flat(model: SoftmaxModel, x: np.ndarray):
    """Probabilities and penultimate activations for flat (P, d) features."""
    if x.shape[-1] != model.feature_dim:
        raise ValueError(f"feature dim {x.shape[-1]} does not match model {model.feature_dim}")
    h = penultimate_flat(model, x)
    return _softmax(h @ model.w2 + model.b2), h


def forward(model: SoftmaxModel, sample) -> np.ndarray:
    """Per-pixel class histograms of shape (H, W, N)."""
    feats = sample.features if isinstance(sample, SceneSample) else np.asarray(sample, dtype=float)
    h, w, d = feats.shape
    probs, _ = forward_flat(model, feats.reshape(-1, d))
    return probs.reshape(h, w, model.n_classes)


def penultimate(model: SoftmaxModel, sample) -> np.ndarray:
    feats = sample.features if isinstance(sample, SceneSample) else np.asarray(sample, dtype=float)
    h, w, d = feats.shape
    return penultimate_flat(model, feats.reshape(-1, d)).reshape(h, w, -1)


def predict(model: SoftmaxModel, sample) -> np.ndarray:
    return forward(model, sample).argmax(axis=-1)


def accuracy(model: SoftmaxModel, samples) -> float:
    samples = [samples] if isinstance(samples, SceneSample) else list(samples)
    correct = total = 0
    for sample in samples:
        pred = predict(model, sample)
        correct += int((pred == sample.labels).sum())
        total += pred.size
    return correct / total


# ---------------------------------------------------------------------------
# Losses and gradients
# ---------------------------------------------------------------------------


class LossError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LossSpec:
    """Training-loss selection.

    kind "ce" needs no matrix; "wasserstein" is the one-hot O(N) fast path
    and expects an f-transformed matrix; "sinkhorn" accepts arbitrary
    (conservative) target histograms and optimizes the entropic transport
    objective, whose exact source gradient is the dual potential.
    """

    kind: str  # "ce" | "wasserstein" | "sinkhorn"
    matrix: GroundMatrix | None = None
    epsilon: float = 0.25
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 300

    def __post_init__(self):
        if self.kind not in ("ce", "wasserstein", "sinkhorn"):
            raise LossError(f"unknown loss kind {self.kind!r}")
        if self.kind in ("wasserstein", "sinkhorn") and self.matrix is None:
            raise LossError(f"{self.kind} loss requires a ground matrix")


def _flatten_batch(model, samples, targets, mask):
    samples = [samples] if isinstance(samples, SceneSample) else list(samples)
    if targets is not None and not isinstance(targets, (list, tuple)):
        targets = [targets]
    if mask is not None and not isinstance(mask, (list, tuple)):
        mask = [mask]
    xs, labels, rows = [], [], []
    n = model.n_classes
    for k, sample in enumerate(samples):
        feats = sample.features.reshape(-1, sample.features.shape[-1])
        keep = (
            np.asarray(mask[k], dtype=bool).reshape(-1)
            if mask is not None
            else np.ones(feats.shape[0], dtype=bool)
        )
        xs.append(feats[keep])
        labels.append(sample.labels.reshape(-1)[keep])
        if targets is not None:
            tgt = np.asarray(targets[k], dtype=float).reshape(-1, n)
            rows.append(tgt[keep])
    x = np.concatenate(xs, axis=0)
    labs = np.concatenate(labels, axis=0)
    if x.shape[0] == 0:
        raise LossError("no pixels selected for the loss")
    if targets is None:
        t = np.zeros((x.shape[0], n))
        t[np.arange(x.shape[0]), labs] = 1.0
    else:
        t = np.concatenate(rows, axis=0)
    return x, labs, t


def _is_onehot(t: np.ndarray) -> bool:
    return bool(np.all((t == 0.0) | (t == 1.0)) and np.all(t.sum(axis=1) == 1.0))


def batch_loss_grad(model: SoftmaxModel, samples, loss: LossSpec, targets=None, mask=None):
    """Point-wise average loss over all pixels and its parameter gradient.

    Gradients are analytic: the per-pixel loss gradient w.r.t. the softmax
    input is s*(c - s.c) for transport losses with per-pixel cost vector c
    (the true-class column for the one-hot fast path, the Sinkhorn dual
    potential otherwise) and (s - t) for cross-entropy; both are chained
    through the optional tanh hidden layer.
    """
    x, labs, t = _flatten_batch(model, samples, targets, mask)
    probs, hidden = forward_flat(model, x)
    p = x.shape[0]

    if loss.kind == "ce":
        eps = 1e-12
        value = float(-(t * np.log(probs + eps)).sum(axis=1).mean())
        dz = (probs - t) / p
    elif loss.kind == "wasserstein":
        if not _is_onehot(t):
            raise LossError("non-one-hot target passed to the one-hot wasserstein fast path")
        cols = np.asarray(loss.matrix)[:, t.argmax(axis=1)].T  # (P, N)
        pixel_cost = (probs * cols).sum(axis=1)
        value = float(pixel_cost.mean())
        dz = probs * (cols - pixel_cost[:, None]) / p
    else:  # sinkhorn
        potentials, _, reg, _ = sinkhorn_potentials_batch(
            probs, t, loss.matrix, epsilon=loss.epsilon,
            max_iter=loss.sinkhorn_max_iter, tol=loss.sinkhorn_tol,
        )
        value = float(reg.mean())
        inner = (probs * potentials).sum(axis=1)
        dz = probs * (potentials - inner[:, None]) / p

    grads = {"w2": hidden.T @ dz, "b2": dz.sum(axis=0)}
    if model.w1 is not None:
        dh = (dz @ model.w2.T) * (1.0 - hidden**2)
        grads["w1"] = x.T @ dh
        grads["b1"] = dh.sum(axis=0)
    return value, grads


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1.0
    steps: int = 300
    batch: int = 4
    seed: int = 0
    loss: LossSpec = field(default_factory=lambda: LossSpec("ce"))
    log_every: int = 25
    lr_decay: bool = False  # linear decay to zero over the run


@dataclass(eq=False)
class TrainResult:
    model: SoftmaxModel
    curve: list


def train(model: SoftmaxModel, dataset, config: TrainConfig, targets=None, mask=None) -> TrainResult:
    """Plain SGD with a fixed seed; deterministic given (model, data, config).

    Aborts with TrainingDiverged if the loss stops being finite.  When
    ``targets``/``mask`` are given they must align with ``dataset`` and
    override the ground-truth one-hot labels (used by self-training).
    """
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    dataset = list(dataset)
    curve = []
    for step in range(config.steps):
        idx = rng.integers(0, len(dataset), size=min(config.batch, len(dataset)))
        batch = [dataset[i] for i in idx]
        batch_targets = [targets[i] for i in idx] if targets is not None else None
        batch_mask = [mask[i] for i in idx] if mask is not None else None
        value, grads = batch_loss_grad(model, batch, config.loss, batch_targets, batch_mask)
        if not np.isfinite(value):
            raise TrainingDiverged(f"loss became non-finite at step {step}")
        lr = config.lr * (1.0 - step / config.steps) if config.lr_decay else config.lr
        for name, grad in grads.items():
            arr = getattr(model, name)
            arr -= lr * grad
        if step % config.log_every == 0 or step == config.steps - 1:
            acc = float(np.mean([(predict(model, b) == b.labels).mean() for b in batch]))
            curve.append({"step": step, "loss": value, "accuracy": acc})
    return TrainResult(model=model, curve=curve)


# ---------------------------------------------------------------------------
# Conservative labels and self-training
# ---------------------------------------------------------------------------


def smooth_pseudo_label(pred, lam: float, confidence_threshold: float):
    """Conservative target (1-lam)*onehot(argmax) + lam*pred, or None when
    the prediction is below the confidence threshold."""
    pred = np.asarray(pred, dtype=float)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    if pred.max() < confidence_threshold:
        return None
    onehot = np.zeros_like(pred)
    onehot[pred.argmax()] = 1.0
    return (1.0 - lam) * onehot + lam * pred


def smooth_pseudo_labels(probs: np.ndarray, lam: float, confidence_threshold: float):
    """Vectorized smoothing over an (H, W, N) probability grid.

    Returns (targets, accepted) where rejected pixels keep a dummy one-hot
    target and accepted is the per-pixel keep mask.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    flat = probs.reshape(-1, probs.shape[-1])
    accepted = flat.max(axis=1) >= confidence_threshold
    onehot = np.zeros_like(flat)
    onehot[np.arange(flat.shape[0]), flat.argmax(axis=1)] = 1.0
    targets = (1.0 - lam) * onehot + lam * flat
    return targets.reshape(probs.shape), accepted.reshape(probs.shape[:-1])


@dataclass(frozen=True)
class SelfTrainConfig:
    matrix: GroundMatrix = field(default_factory=default_severity_matrix)
    epsilon: float = 0.1
    lam: float = 0.5
    confidence_threshold: float = 0.6
    lr: float = 0.2
    steps_per_round: int = 40
    batch: int = 4
    seed: int = 0


@dataclass(eq=False)
class SelfTrainResult:
    model: SoftmaxModel
    accepted_fractions: list
    rounds_run: int


def self_train(
    model: SoftmaxModel,
    source_dataset,
    target_dataset,
    rounds: int,
    config: SelfTrainConfig = SelfTrainConfig(),
) -> SelfTrainResult:
    """Sinkhorn-loss self-training on conservative pseudo-labels.

    Per round: predict on the target domain, smooth confident predictions
    into conservative labels, and retrain on the accepted pixels.  A round
    with zero accepted pixels is skipped with a warning.  The source
    dataset is the provenance of the pretrained model and is not revisited.
    """
    del source_dataset
    model = model.copy()
    target_dataset = list(target_dataset)
    loss = LossSpec("sinkhorn", matrix=config.matrix, epsilon=config.epsilon)
    accepted_fractions: list[float] = []
    for rnd in range(rounds):
        targets, masks = [], []
        total = kept = 0
        for sample in target_dataset:
            probs = forward(model, sample)
            tgt, acc = smooth_pseudo_labels(probs, config.lam, config.confidence_threshold)
            targets.append(tgt)
            masks.append(acc)
            total += acc.size
            kept += int(acc.sum())
        accepted_fractions.append(kept / total)
        if kept == 0:
            warnings.warn(f"self-training round {rnd}: no pixel above threshold, skipped")
            continue
        result = train(
            model,
            target_dataset,
            TrainConfig(
                lr=config.lr,
                steps=config.steps_per_round,
                batch=config.batch,
                seed=config.seed + rnd,
                loss=loss,
                log_every=max(1, config.steps_per_round),
            ),
            targets=targets,
            mask=masks,
        )
        model = result.model
    return SelfTrainResult(model=model, accepted_fractions=accepted_fractions, rounds_run=rounds)


# ---------------------------------------------------------------------------
# Severity experiment (CE baseline vs Wasserstein fine-tune)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeverityExperimentConfig:
    scene: SceneConfig = field(default_factory=lambda: SceneConfig(noise=0.14))
    train_scenes: int = 48
    eval_scenes: int = 32
    hidden: int = 16
    pretrain_steps: int = 500
    finetune_steps: int = 800
    lr: float = 1.0
    batch: int = 4
    score_rho: float = 2.0  # risk-weighted scoring metric d^rho


@dataclass(frozen=True)
class SeverityExperimentResult:
    accuracy_ce: float
    accuracy_w: float
    severity_ce: float
    severity_w: float
    confusion_ce: np.ndarray
    confusion_w: np.ndarray

    @property
    def severity_ratio(self) -> float:
        return self.severity_w / self.severity_ce

    @property
    def accuracy_gap(self) -> float:
        return abs(self.accuracy_ce - self.accuracy_w)


def severity_experiment(seed: int, config: SeverityExperimentConfig = SeverityExperimentConfig()):
    """One seed of the CE-vs-Wasserstein severity comparison.

    Both branches share the CE-pretrained model and the same fine-tune data
    order; only the loss differs.  Severity is scored with the d^rho
    risk-weighted metric so catastrophic confusions dominate the scale, and
    the Wasserstein branch trains on the calibrated (transposed) table from
    :func:`training_severity_matrix`.
    """
    from .metrics import confusion as _confusion, severity_score

    d_score = default_severity_matrix().transformed(MetricTransform.power(config.score_rho))
    train_ds = make_dataset(range(seed * 1000, seed * 1000 + config.train_scenes), config.scene)
    eval_ds = make_dataset(
        range(seed * 1000 + 500, seed * 1000 + 500 + config.eval_scenes), config.scene
    )
    model = init_model(hidden=config.hidden, seed=seed)
    pre = train(
        model,
        train_ds,
        TrainConfig(lr=config.lr, steps=config.pretrain_steps, batch=config.batch, seed=seed),
    ).model
    branch = lambda loss: train(
        pre,
        train_ds,
        TrainConfig(
            lr=config.lr,
            steps=config.finetune_steps,
            batch=config.batch,
            seed=seed + 77,
            loss=loss,
            lr_decay=True,
        ),
    ).model
    ce_model = branch(LossSpec("ce"))
    w_model = branch(LossSpec("wasserstein", matrix=training_severity_matrix()))

    def evaluate(m):
        cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
        for sample in eval_ds:
            cm += _confusion(predict(m, sample), sample.labels, N_CLASSES)
        return cm

    cm_ce = evaluate(ce_model)
    cm_w = evaluate(w_model)
    return SeverityExperimentResult(
        accuracy_ce=float(np.trace(cm_ce) / cm_ce.sum()),
        accuracy_w=float(np.trace(cm_w) / cm_w.sum()),
        severity_ce=severity_score(cm_ce, d_score),
        severity_w=severity_score(cm_w, d_score),
        confusion_ce=cm_ce,
        confusion_w=cm_w,
    )


# ---------------------------------------------------------------------------
# Dataset persistence
# ---------------------------------------------------------------------------


def save_dataset(dirpath, samples, config: SceneConfig) -> None:
    """Labels as P2 graymaps, features as flat CSV, plus manifest and config."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    textio.write_kv(
        dirpath / "config.txt",
        {
            "height": config.height,
            "width": config.width,
            "noise": config.noise,
            "min_objects": config.min_objects,
            "max_objects": config.max_objects,
        },
    )
    manifest = {"scenes": [int(s.seed) for s in samples], "classes": list(CLASS_NAMES)}
    (dirpath / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=0) + "\n")
    for k, sample in enumerate(samples):
        textio.write_pgm(dirpath / f"scene_{k:04d}_labels.pgm", sample.labels, maxval=N_CLASSES - 1)
        flat = sample.features.reshape(-1, sample.features.shape[-1])
        np.savetxt(dirpath / f"scene_{k:04d}_features.csv", flat, delimiter=",", fmt="%.17g")


def load_dataset(dirpath):
    dirpath = Path(dirpath)
    manifest = json.loads((dirpath / "manifest.json").read_text())
    kv = textio.read_kv(dirpath / "config.txt")
    config = SceneConfig(
        height=int(kv["height"]),
        width=int(kv["width"]),
        noise=float(kv["noise"]),
        min_objects=int(kv["min_objects"]),
        max_objects=int(kv["max_objects"]),
    )
    samples = []
    for k, seed in enumerate(manifest["scenes"]):
        labels = textio.read_pgm(dirpath / f"scene_{k:04d}_labels.pgm")
        flat = np.loadtxt(dirpath / f"scene_{k:04d}_features.csv", delimiter=",", ndmin=2)
        features = flat.reshape(labels.shape[0], labels.shape[1], -1)
        samples.append(SceneSample(features=features, labels=labels, seed=int(seed)))
    return samples, config
