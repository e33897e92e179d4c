"""Desk-scale self-supervised training: MLP encoder + projector on two
augmented views per sample, loss selection over the supported objectives,
SGD-with-momentum via the autodiff tape, per-epoch diagnostics, and
bitwise-reproducible checkpointing.

Determinism: everything derives from the run seed through fixed stream
labels (0 = weight init, 1 = per-epoch streams, 4 = diagnostics draws,
5 = evaluation split). Within an epoch stream, label 0 shuffles the sample
order and label 1 is the augmentation domain, keyed per step and view.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import diagnostics as diag
from . import losses as losses_mod
from .autodiff import Tape, backward, forward
from .data import GenParams, HierarchicalDataset, augment_batch, generate, load_csv
from .errors import (BadConfig, BadDims, IoError, NonFinite, VersionMismatch)
from .hierarchy import (HierarchyMask, mask_quality, supervised_mask,
                        threshold_mask, whole_batch_mask)
from .linalg import cosine_sim_matrix, row_norms
from .losses import (NNQueue, build_barlow_graph, build_combined_graph,
                     build_hex_graph, build_info_nce_graph,
                     build_vicreg_graph, nnclr_positive_rows,
                     paired_positive_index)
from .rng import Rng, _M64, _PHI, _SPLIT, _mix64_array
from .schedule import ThresholdSchedule, adaptive_threshold, threshold_for_epoch

CHECKPOINT_MAGIC = b"HEXCKPT1"
METRICS_COLUMNS = [
    "epoch", "loss_total", "loss_invariance", "loss_regularization",
    "hex_term_mean", "threshold", "adaptive_threshold", "mean_H_size",
    "clamp_events", "mask_precision", "mask_recall", "mask_size",
    "rankme_super", "rankme_random", "mean_super", "mean_regular",
    "ratio_projection", "ratio_representation", "skew_super", "skew_regular",
    "knn_class", "knn_super",
]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    encoder_hidden: list = field(default_factory=lambda: [64])
    repr_dim: int = 16
    proj_hidden: int = 32
    proj_dim: int = 8

    def __post_init__(self):
        dims = list(self.encoder_hidden) + [self.repr_dim, self.proj_hidden, self.proj_dim]
        if any(int(d) < 1 for d in dims):
            raise BadDims(f"all layer widths must be >= 1, got {dims}")


@dataclass
class LossConfig:
    kind: str = "simclr"
    tau: Optional[float] = None          # default depends on kind
    qhi_tau: float = 0.1
    qhi_sign: str = "subtract"
    qhi_n: str = "anchors"               # "anchors" | "views"
    eps_den: float = 1e-6
    alpha: Optional[float] = None        # default depends on kind
    hex_scale: Optional[float] = None    # default depends on kind
    barlow_lambda: float = 0.005
    barlow_scale: float = 0.1
    vicreg_sim: float = 25.0
    vicreg_var: float = 25.0
    vicreg_cov: float = 1.0

    def __post_init__(self):
        if self.kind not in losses_mod.LOSS_KINDS:
            raise BadConfig(f"loss kind must be one of {losses_mod.LOSS_KINDS}, "
                            f"got {self.kind!r}")
        if self.tau is None:
            self.tau = 0.2 if self.kind.startswith("nnclr") else 0.1
        if self.alpha is None:
            self.alpha = 0.5 if self.kind in ("barlow_hex", "vicreg_hex") else 1.0
        if self.hex_scale is None:
            self.hex_scale = 5.0 if self.kind == "vicreg_hex" else 1.0
        if self.qhi_sign not in losses_mod.QHI_SIGNS:
            raise BadConfig(f"qhi_sign must be one of {losses_mod.QHI_SIGNS}")
        if self.qhi_n not in ("anchors", "views"):
            raise BadConfig("qhi_n must be 'anchors' or 'views'")
        if not 0.0 <= self.alpha <= 1.0:
            raise BadConfig(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def is_hex(self) -> bool:
        return self.kind.endswith("_hex")

    @property
    def is_dim(self) -> bool:
        return self.kind.startswith(("barlow", "vicreg"))

    @property
    def uses_queue(self) -> bool:
        return self.kind.startswith("nnclr")


@dataclass
class OptimConfig:
    lr: float = 0.1
    momentum: float = 0.9
    cosine_lr: bool = False

    def __post_init__(self):
        # lr == 0 is allowed (freezes parameters, useful for harness checks)
        if self.lr < 0:
            raise BadConfig(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise BadConfig(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass
class AugmentConfig:
    noise_sigma: float = 0.3
    mask_prob: float = 0.1


@dataclass
class RunConfig:
    epochs: int = 200
    batch_size: int = 64
    seed: int = 1
    eval_every: int = 20
    queue_capacity: int = 256
    holdout_fraction: float = 0.2
    knn_k: int = 5
    rank_subsets: int = 8
    rank_subset_size: int = 100

    def __post_init__(self):
        if self.epochs < 1:
            raise BadConfig("epochs must be >= 1")
        if self.batch_size < 2:
            raise BadConfig("batch_size must be >= 2")
        if self.eval_every < 1:
            raise BadConfig("eval_every must be >= 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise BadConfig("holdout_fraction must lie in (0, 1)")


_SECTION_TYPES = {
    "model": ModelConfig, "loss": LossConfig, "optimizer": OptimConfig,
    "augment": AugmentConfig, "train": RunConfig,
}


@dataclass
class TrainConfig:
    data: GenParams | str
    model: ModelConfig
    loss: LossConfig
    optimizer: OptimConfig
    augment: AugmentConfig
    train: RunConfig
    schedule: ThresholdSchedule
    mask_source: Optional[str] = None    # None -> schedule kind; or supervised/all

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        if not isinstance(raw, dict):
            raise BadConfig("config must be a JSON object")
        known = {"data", "schedule", "mask_source"} | set(_SECTION_TYPES)
        unknown = set(raw) - known
        if unknown:
            raise BadConfig(f"unknown config sections: {sorted(unknown)}")
        sections = {}
        for name, typ in _SECTION_TYPES.items():
            sub = dict(raw.get(name, {}))
            try:
                sections[name] = typ(**sub)
            except TypeError as e:
                raise BadConfig(f"bad '{name}' section: {e}") from e
        data_raw = raw.get("data", {})
        if isinstance(data_raw, str):
            data = data_raw
        elif isinstance(data_raw, dict) and "path" in data_raw:
            data = str(data_raw["path"])
        else:
            try:
                data = GenParams(**dict(data_raw))
            except TypeError as e:
                raise BadConfig(f"bad 'data' section: {e}") from e
        sched_raw = dict(raw.get("schedule", {}))
        sched_raw.setdefault("kind", "adaptive")
        sched_raw.setdefault("total_epochs", sections["train"].epochs)
        try:
            schedule = ThresholdSchedule(**sched_raw)
        except TypeError as e:
            raise BadConfig(f"bad 'schedule' section: {e}") from e
        mask_source = raw.get("mask_source")
        if mask_source not in (None, "supervised", "all"):
            raise BadConfig("mask_source must be null, 'supervised' or 'all'")
        return cls(data=data, schedule=schedule, mask_source=mask_source, **sections)

    def to_dict(self) -> dict:
        out = {name: asdict(getattr(self, name)) for name in _SECTION_TYPES}
        out["data"] = self.data if isinstance(self.data, str) else asdict(self.data)
        out["schedule"] = asdict(self.schedule)
        out["mask_source"] = self.mask_source
        return out

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def load_dataset(self) -> HierarchicalDataset:
        if isinstance(self.data, str):
            return load_csv(self.data)
        return generate(self.data)


# ---------------------------------------------------------------------------
# model parameters
# ---------------------------------------------------------------------------

@dataclass
class ModelParams:
    weights: list
    biases: list
    n_encoder_layers: int
    dims: list

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights],
                           [b.copy() for b in self.biases],
                           self.n_encoder_layers, list(self.dims))


def layer_dims(model: ModelConfig, input_dim: int) -> list:
    return ([int(input_dim)] + [int(h) for h in model.encoder_hidden]
            + [int(model.repr_dim), int(model.proj_hidden), int(model.proj_dim)])


def init_params(model: ModelConfig, input_dim: int, seed: int) -> ModelParams:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)), zero
    biases; layer i draws fan_in * fan_out uniforms (row-major) from the
    init stream's child i."""
    dims = layer_dims(model, input_dim)
    if any(d < 1 for d in dims):
        raise BadDims(f"layer widths must be >= 1, got {dims}")
    root = Rng.from_seed(seed).child(0)
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        a = np.sqrt(6.0 / (fan_in + fan_out))
        u = root.child(i).uniform_array(fan_in * fan_out)
        weights.append((a * (2.0 * u - 1.0)).reshape(fan_in, fan_out))
        biases.append(np.zeros((1, fan_out)))
    n_enc = len(model.encoder_hidden) + 1
    return ModelParams(weights, biases, n_enc, dims)


def mlp_forward(params: ModelParams, x: np.ndarray):
    """Plain forward pass mirroring the tape graph op for op.

    Returns (representation, raw projector output). tanh after every
    encoder layer except the last (linear representation head); relu after
    the projector's hidden layer; the final projector layer is linear.
    """
    h = np.asarray(x, dtype=np.float64)
    n_enc = params.n_encoder_layers
    for i in range(n_enc):
        h = h @ params.weights[i] + params.biases[i]
        if i < n_enc - 1:
            h = np.tanh(h)
    r = h
    p = np.maximum(r @ params.weights[n_enc] + params.biases[n_enc], 0.0)
    y = p @ params.weights[n_enc + 1] + params.biases[n_enc + 1]
    return r, y


def unit_rows(y: np.ndarray) -> np.ndarray:
    norms = row_norms(y)
    if (norms <= 1e-12).any():
        raise NonFinite("projector produced a zero embedding row")
    return y / norms[:, None]


def _safe_unit_rows(m: np.ndarray) -> np.ndarray:
    norms = row_norms(m)
    norms = np.where(norms > 1e-12, norms, 1.0)
    return m / norms[:, None]


def build_model_graph(tape: Tape, params: ModelParams, views: list):
    """Shared-parameter forward subgraphs for each augmented view.

    Returns (weight_nodes, bias_nodes, per-view (repr_node, proj_node))."""
    w_nodes = [tape.input(w, name=f"w{i}") for i, w in enumerate(params.weights)]
    b_nodes = [tape.input(b, name=f"b{i}") for i, b in enumerate(params.biases)]
    outs = []
    n_enc = params.n_encoder_layers
    for v, x in enumerate(views):
        h = tape.constant(np.asarray(x, dtype=np.float64), name=f"x{v}")
        for i in range(n_enc):
            h = tape.add(tape.matmul(h, w_nodes[i]), b_nodes[i])
            if i < n_enc - 1:
                h = tape.tanh(h)
        r = h
        p = tape.relu(tape.add(tape.matmul(r, w_nodes[n_enc]), b_nodes[n_enc]))
        y = tape.add(tape.matmul(p, w_nodes[n_enc + 1]), b_nodes[n_enc + 1])
        outs.append((r, y))
    return w_nodes, b_nodes, outs


def concat_rows(tape: Tape, top, bottom, n_top: int, n_bottom: int):
    """Stack two row blocks with constant selector matmuls (no concat op)."""
    sel_a = np.zeros((n_top + n_bottom, n_top))
    sel_a[:n_top] = np.eye(n_top)
    sel_b = np.zeros((n_top + n_bottom, n_bottom))
    sel_b[n_top:] = np.eye(n_bottom)
    return tape.add(tape.matmul(tape.constant(sel_a), top),
                    tape.matmul(tape.constant(sel_b), bottom))


# ---------------------------------------------------------------------------
# training state
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    config: TrainConfig
    params: ModelParams
    mom_w: list
    mom_b: list
    queue: Optional[NNQueue]
    epoch: int = 0     # epochs completed so far


def init_state(config: TrainConfig, input_dim: int) -> TrainState:
    params = init_params(config.model, input_dim, config.train.seed)
    mom_w = [np.zeros_like(w) for w in params.weights]
    mom_b = [np.zeros_like(b) for b in params.biases]
    queue = NNQueue(config.train.queue_capacity) if config.loss.uses_queue else None
    return TrainState(config, params, mom_w, mom_b, queue, 0)


def _epoch_lr(opt: OptimConfig, epoch: int, total: int) -> float:
    if not opt.cosine_lr:
        return opt.lr
    return opt.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / max(1, total)))


def _augment_keys(step_stream: Rng, count: int) -> np.ndarray:
    labels = np.arange(1, count + 1, dtype=np.uint64)
    return _mix64_array(np.uint64(step_stream.key ^ _SPLIT) + labels * np.uint64(_PHI))


def _build_loss_mask(config: TrainConfig, sims, pos, supers, epoch,
                     ada_eps) -> HierarchyMask:
    source = config.mask_source
    if source == "supervised":
        return supervised_mask(supers, pos)
    if source == "all":
        return whole_batch_mask(sims.shape[0], pos)
    kind = config.schedule.kind
    eps = ada_eps if kind == "adaptive" else threshold_for_epoch(config.schedule, epoch)
    return threshold_mask(sims, eps, pos, source=kind)


def train_epoch(state: TrainState, dataset: HierarchicalDataset) -> dict:
    """Run one epoch of shuffled two-view batches; returns the metrics row
    (loss terms, thresholds, mask statistics) and advances state.epoch."""
    cfg = state.config
    e = state.epoch
    n = dataset.n_samples
    bsz = cfg.train.batch_size
    lr = _epoch_lr(cfg.optimizer, e, cfg.train.epochs)
    ep_stream = Rng.from_seed(cfg.train.seed).child(1).child(e)
    order = list(range(n))
    ep_stream.child(0).shuffle(order)
    aug_dom = ep_stream.child(1)

    sums = {k: 0.0 for k in ("loss", "inv", "reg", "thr", "ada", "h_size",
                             "prec", "rec", "diag_size")}
    hex_sum, hex_batches = 0.0, 0
    clamp_total = 0
    n_batches = 0

    for step, lo in enumerate(range(0, n, bsz)):
        idx = order[lo:lo + bsz]
        b = len(idx)
        if b < 2:
            break
        keys = _augment_keys(aug_dom.child(step), 2 * b)
        xa = augment_batch(dataset.x[idx], cfg.augment.noise_sigma,
                           cfg.augment.mask_prob, keys[0::2])
        xb = augment_batch(dataset.x[idx], cfg.augment.noise_sigma,
                           cfg.augment.mask_prob, keys[1::2])

        try:
            row = _train_step(state, xa, xb,
                              dataset.superclass_labels[idx], lr, e)
        except NonFinite as err:
            raise NonFinite(f"epoch {e + 1}, batch {step}: {err}") from err

        for k, v in row.items():
            if k == "hex":
                if v is not None:
                    hex_sum += v
                    hex_batches += 1
            elif k == "clamps":
                clamp_total += v
            else:
                sums[k] += v
        n_batches += 1

    state.epoch = e + 1
    m = {k: v / n_batches for k, v in sums.items()}
    return {
        "epoch": e + 1,
        "loss_total": m["loss"],
        "loss_invariance": m["inv"],
        "loss_regularization": m["reg"],
        "hex_term_mean": hex_sum / hex_batches if hex_batches else None,
        "threshold": m["thr"],
        "adaptive_threshold": m["ada"],
        "mean_H_size": m["h_size"],
        "clamp_events": clamp_total,
        "mask_precision": m["prec"],
        "mask_recall": m["rec"],
        "mask_size": m["diag_size"],
    }


def _train_step(state: TrainState, xa, xb, batch_supers, lr, epoch) -> dict:
    cfg = state.config
    b = xa.shape[0]
    pos = paired_positive_index(b)
    row_supers = np.concatenate([batch_supers, batch_supers])

    # Plain forward to derive the frozen constants (threshold, mask, NN rows).
    ra, ya = mlp_forward(state.params, xa)
    rb, yb = mlp_forward(state.params, xb)
    z_full = unit_rows(np.vstack([ya, yb]))

    nn_rows = None
    z_used = z_full
    if cfg.loss.uses_queue and state.queue is not None and len(state.queue) > 0:
        nn_rows = nnclr_positive_rows(state.queue, z_full[:b])
        keep = np.ones_like(z_full)
        keep[b:] = 0.0
        pad = np.zeros_like(z_full)
        pad[b:] = nn_rows
        z_used = z_full * keep + pad

    sims = cosine_sim_matrix(z_used)
    elig = ~np.eye(2 * b, dtype=bool)
    elig[np.arange(2 * b), pos] = False
    ada_eps = adaptive_threshold(sims[elig], cfg.schedule.sigma_multiplier)
    sched_eps = threshold_for_epoch(cfg.schedule, epoch)
    thr_used = ada_eps if sched_eps is None else sched_eps

    diag_mask = threshold_mask(sims, ada_eps, pos, source="adaptive")
    dq = mask_quality(diag_mask, row_supers)

    # Differentiable graph with the mask and NN rows frozen as constants.
    tape = Tape()
    w_nodes, b_nodes, outs = build_model_graph(tape, state.params, [xa, xb])
    (r_a, y_a), (r_b, y_b) = outs
    y_cat = concat_rows(tape, y_a, y_b, b, b)
    z_node = tape.row_l2_normalize(y_cat, name="embeddings")
    if nn_rows is not None:
        keep_c = tape.constant(keep, name="nn_keep")
        pad_c = tape.constant(pad, name="nn_rows")
        z_node = tape.add(tape.mul_elem(z_node, keep_c), pad_c, name="nn_batch")

    loss_cfg = cfg.loss
    qhi_n = b if loss_cfg.qhi_n == "anchors" else 2 * b
    contra = None
    dim = None
    if loss_cfg.kind in ("simclr", "nnclr"):
        contra = build_info_nce_graph(tape, z_node, pos, loss_cfg.tau)
        total_node = contra.total
    elif loss_cfg.kind in ("simclr_hex", "nnclr_hex"):
        mask = _build_loss_mask(cfg, sims, pos, row_supers, epoch, ada_eps)
        contra = build_hex_graph(tape, z_node, mask, loss_cfg.tau,
                                 qhi_tau=loss_cfg.qhi_tau,
                                 qhi_sign=loss_cfg.qhi_sign, qhi_n=qhi_n,
                                 eps_den=loss_cfg.eps_den)
        total_node = contra.total
    else:
        d = cfg.model.proj_dim
        if loss_cfg.kind.startswith("barlow"):
            builder = lambda: build_barlow_graph(
                tape, y_a, y_b, b, d, loss_cfg.barlow_lambda, loss_cfg.barlow_scale)
        else:
            builder = lambda: build_vicreg_graph(
                tape, y_a, y_b, b, d, loss_cfg.vicreg_sim, loss_cfg.vicreg_var,
                loss_cfg.vicreg_cov)
        if loss_cfg.is_hex:
            mask = _build_loss_mask(cfg, sims, pos, row_supers, epoch, ada_eps)
            contra = build_hex_graph(tape, z_node, mask, loss_cfg.tau,
                                     qhi_tau=loss_cfg.qhi_tau,
                                     qhi_sign=loss_cfg.qhi_sign, qhi_n=qhi_n,
                                     eps_den=loss_cfg.eps_den)
            dim = builder()
            total_node = build_combined_graph(tape, contra.total, dim.total,
                                              loss_cfg.alpha, loss_cfg.hex_scale)
        else:
            dim = builder()
            total_node = dim.total

    loss_value = forward(tape)
    backward(tape)

    # SGD with momentum on every parameter node's accumulated gradient.
    mom = cfg.optimizer.momentum
    for p_arr, v, node in zip(state.params.weights, state.mom_w, w_nodes):
        v *= mom
        v += node.grad
        p_arr -= lr * v
    for p_arr, v, node in zip(state.params.biases, state.mom_b, b_nodes):
        v *= mom
        v += node.grad
        p_arr -= lr * v

    # NNCLR queue learns the fresh positive-view embeddings after the step.
    if cfg.loss.uses_queue and state.queue is not None:
        state.queue.push(z_full[b:])

    if contra is not None:
        bd = contra.breakdown()
        inv, reg = bd.invariance_term, bd.regularization_term
        hex_mean, h_size, clamps = bd.hex_term_mean, bd.mean_H_size or 0.0, bd.clamp_events
    else:
        inv, reg = dim.terms()
        hex_mean, h_size, clamps = None, 0.0, 0

    return {"loss": loss_value, "inv": inv, "reg": reg, "hex": hex_mean,
            "thr": thr_used, "ada": ada_eps, "h_size": h_size,
            "clamps": clamps, "prec": dq.precision, "rec": dq.recall,
            "diag_size": dq.mean_mask_size}


# ---------------------------------------------------------------------------
# evaluation and per-epoch diagnostics
# ---------------------------------------------------------------------------

def evaluate(state: TrainState, dataset: HierarchicalDataset,
             probe: str = "knn_class", k: int = 5,
             holdout_fraction: Optional[float] = None,
             seed: Optional[int] = None) -> float:
    """Cosine KNN accuracy of encoder representations on a held-out split.

    The split permutation derives from the run seed only, so it is stable
    across epochs and across runs that share a seed."""
    if probe not in ("knn_class", "knn_super"):
        raise BadConfig(f"probe must be knn_class or knn_super, got {probe!r}")
    cfg = state.config
    frac = cfg.train.holdout_fraction if holdout_fraction is None else holdout_fraction
    seed = cfg.train.seed if seed is None else seed
    r, _ = mlp_forward(state.params, dataset.x)
    labels = (dataset.class_labels if probe == "knn_class"
              else dataset.superclass_labels)
    n = dataset.n_samples
    perm = list(range(n))
    Rng.from_seed(seed).child(5).shuffle(perm)
    n_query = max(1, int(round(frac * n)))
    query_idx = np.asarray(perm[:n_query])
    train_idx = np.asarray(perm[n_query:])
    return diag.knn_accuracy(r[train_idx], labels[train_idx],
                             r[query_idx], labels[query_idx], k)


def run_diagnostics(state: TrainState, dataset: HierarchicalDataset,
                    epoch: int) -> dict:
    cfg = state.config
    r, y = mlp_forward(state.params, dataset.x)
    z = _safe_unit_rows(y)
    diag_seed = Rng.from_seed(cfg.train.seed).child(4).child(epoch).key
    rank = diag.subset_rank_curve(r, dataset.superclass_labels,
                                  cfg.train.rank_subsets,
                                  cfg.train.rank_subset_size,
                                  seed=diag_seed, epoch=epoch)
    proj = diag.distribution_stats(cosine_sim_matrix(z),
                                   dataset.superclass_labels,
                                   space_tag="projection", epoch=epoch)
    rep = diag.distribution_stats(cosine_sim_matrix(_safe_unit_rows(r)),
                                  dataset.superclass_labels,
                                  space_tag="representation", epoch=epoch)
    return {
        "rankme_super": rank.mean_rankme_superclass,
        "rankme_random": rank.mean_rankme_random,
        "mean_super": proj.mean_super,
        "mean_regular": proj.mean_regular,
        "ratio_projection": proj.ratio,
        "ratio_representation": rep.ratio,
        "skew_super": proj.skew_super,
        "skew_regular": proj.skew_regular,
        "knn_class": evaluate(state, dataset, "knn_class", cfg.train.knn_k),
        "knn_super": evaluate(state, dataset, "knn_super", cfg.train.knn_k),
    }


# ---------------------------------------------------------------------------
# metrics CSV
# ---------------------------------------------------------------------------

def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_metrics_csv(rows: list, path: str):
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(METRICS_COLUMNS) + "\n")
            for row in rows:
                fh.write(",".join(_format_cell(row.get(c)) for c in METRICS_COLUMNS) + "\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_metrics_csv(path: str) -> list:
    try:
        with open(path, "r", newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    header = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        if not ln:
            continue
        cells = ln.split(",")
        row = {}
        for name, cell in zip(header, cells):
            if cell == "":
                row[name] = None
            elif name in ("epoch", "clamp_events"):
                row[name] = int(cell)
            else:
                row[name] = float(cell)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def _state_arrays(state: TrainState) -> list:
    arrays = []
    for i, w in enumerate(state.params.weights):
        arrays.append((f"w{i}", w))
    for i, b in enumerate(state.params.biases):
        arrays.append((f"b{i}", b))
    for i, v in enumerate(state.mom_w):
        arrays.append((f"mw{i}", v))
    for i, v in enumerate(state.mom_b):
        arrays.append((f"mb{i}", v))
    if state.queue is not None and len(state.queue) > 0:
        arrays.append(("queue", state.queue.as_matrix()))
    return arrays


def save_checkpoint(state: TrainState, path: str):
    """Single self-describing file: magic + version, a JSON table of array
    names and shapes, then the flat little-endian float64 payload."""
    arrays = _state_arrays(state)
    header = {
        "format_version": 1,
        "epoch_completed": state.epoch,
        "config": state.config.to_dict(),
        "arrays": [{"name": n, "rows": a.shape[0], "cols": a.shape[1]}
                   for n, a in arrays],
        "queue_len": len(state.queue) if state.queue is not None else None,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for _, a in arrays:
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_checkpoint(path: str) -> TrainState:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(raw) < 12 or raw[:8] != CHECKPOINT_MAGIC:
        raise VersionMismatch(f"{path}: not a checkpoint file (bad magic)")
    (blob_len,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + blob_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IoError(f"{path}: corrupt header: {e}") from e
    if header.get("format_version") != 1:
        raise VersionMismatch(f"{path}: unsupported format version "
                              f"{header.get('format_version')!r}")
    config = TrainConfig.from_dict(header["config"])
    offset = 12 + blob_len
    arrays = {}
    for spec in header["arrays"]:
        count = spec["rows"] * spec["cols"]
        end = offset + 8 * count
        if end > len(raw):
            raise IoError(f"{path}: truncated payload at array {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(
            raw[offset:end], dtype="<f8").astype(np.float64).reshape(
                spec["rows"], spec["cols"])
        offset = end
    if offset != len(raw):
        raise IoError(f"{path}: {len(raw) - offset} trailing bytes")

    input_dim = (config.data.input_dim if isinstance(config.data, GenParams)
                 else arrays["w0"].shape[0])
    n_layers = len(layer_dims(config.model, input_dim)) - 1
    params = ModelParams([arrays[f"w{i}"] for i in range(n_layers)],
                         [arrays[f"b{i}"] for i in range(n_layers)],
                         len(config.model.encoder_hidden) + 1,
                         layer_dims(config.model, input_dim))
    mom_w = [arrays[f"mw{i}"] for i in range(n_layers)]
    mom_b = [arrays[f"mb{i}"] for i in range(n_layers)]
    queue = None
    if config.loss.uses_queue:
        queue = NNQueue(config.train.queue_capacity)
        if header.get("queue_len"):
            queue.push(arrays["queue"])
    return TrainState(config, params, mom_w, mom_b, queue,
                      header["epoch_completed"])


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

def run_training(config: TrainConfig, out_dir: Optional[str] = None,
                 checkpoint_every: Optional[int] = None,
                 resume_from: Optional[str] = None):
    """Train to config.train.epochs; returns (metrics rows, summary, state).

    With out_dir set, writes metrics.csv, summary.json and (optionally)
    periodic checkpoints there. Resuming reproduces the uninterrupted run's
    remaining rows bitwise; rows already covered by the checkpoint are
    reread from the existing metrics.csv when present.
    """
    t0 = time.time()
    dataset = config.load_dataset()
    prior_rows: list = []
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        state.config = config
        if out_dir is not None:
            existing = os.path.join(out_dir, "metrics.csv")
            if os.path.exists(existing):
                prior_rows = [r for r in read_metrics_csv(existing)
                              if r["epoch"] <= state.epoch]
    else:
        state = init_state(config, dataset.dim)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    rows = list(prior_rows)
    total = config.train.epochs
    while state.epoch < total:
        row = {c: None for c in METRICS_COLUMNS}
        row.update(train_epoch(state, dataset))
        e_done = state.epoch
        if e_done % config.train.eval_every == 0 or e_done == total:
            row.update(run_diagnostics(state, dataset, e_done))
        rows.append(row)
        if (out_dir is not None and checkpoint_every
                and e_done % checkpoint_every == 0 and e_done < total):
            save_checkpoint(state, os.path.join(out_dir, f"ckpt_{e_done:06d}.bin"))

    if out_dir is not None and checkpoint_every:
        save_checkpoint(state, os.path.join(out_dir, "ckpt_final.bin"))
    final = rows[-1] if rows else {}
    summary = {
        "schema_version": 1,
        "config_hash": config.config_hash(),
        "seed": config.train.seed,
        "loss_kind": config.loss.kind,
        "epochs": total,
        "final_knn_class": final.get("knn_class"),
        "final_knn_super": final.get("knn_super"),
        "final_rankme_super": final.get("rankme_super"),
        "final_rankme_random": final.get("rankme_random"),
        "wall_time_s": time.time() - t0,
        "metrics_csv": None if out_dir is None else os.path.join(out_dir, "metrics.csv"),
    }
    if out_dir is not None:
        write_metrics_csv(rows, os.path.join(out_dir, "metrics.csv"))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return rows, summary, state
