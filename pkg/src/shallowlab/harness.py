"""Experiment orchestration: data synthesis, teacher-student sweeps,
IDX ingestion, and report emission.

Every run is reproducible from a single master seed: each consumer of
randomness (data, teacher, every sweep point) gets its own fixed stream id,
so reports are byte-stable across repetitions and independent of execution
order.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activations import ActivationProfile, get_activation
from .certificates import (
    InitScheme,
    ProbeParams,
    TheoryConstants,
    certify_init,
    constants_at_init,
    failure_probability,
    lazy_regime_report,
    learning_rate,
    width_requirement,
)
from .errors import ConfigError, DegenerateCertificateError, IdxFormatError
from .hermite import expected_gram, hermite_coefficients
from .linalg import RngStream, gaussian_matrix, sym_eig_extremes
from .network import Dataset, NetParams, forward, loss
from .training import FlowTrace, TrainingTrace, confinement_check, gd_train, rate_certificate

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# Fixed stream ids hanging off the master seed.
STREAM_TRAIN_DATA = 10
STREAM_TEST_DATA = 11
STREAM_TEACHER = 20
STREAM_POINT_BASE = 1000


def sample_unit_sphere_data(n: int, d0: int, rng: RngStream) -> np.ndarray:
    """n Gaussian columns in R^d0 normalized onto the unit sphere."""
    if n < 1 or d0 < 1:
        raise ValueError(f"invalid data shape n={n}, d0={d0}")
    x = rng.generator().standard_normal((d0, n))
    return x / np.linalg.norm(x, axis=0, keepdims=True)


def sample_cluster_data(n: int, d0: int, classes: int, noise: float, rng: RngStream):
    """Digits-like synthetic data: unit-norm points around class centers.

    Returns (X, labels) where labels are class indices in [0, classes).
    """
    gen = rng.generator()
    centers = gen.standard_normal((d0, classes))
    centers /= np.linalg.norm(centers, axis=0, keepdims=True)
    labels = gen.integers(0, classes, size=n)
    x = centers[:, labels] + noise * gen.standard_normal((d0, n))
    x /= np.linalg.norm(x, axis=0, keepdims=True)
    return x, labels


def one_hot_labels(labels: np.ndarray, classes: int) -> np.ndarray:
    """One-hot (classes, n) matrix globally scaled so its norm is 1."""
    n = len(labels)
    y = np.zeros((classes, n))
    y[np.asarray(labels, dtype=int), np.arange(n)] = 1.0
    return y / math.sqrt(n)


def init_weights(dims, scheme: InitScheme, rng: RngStream) -> NetParams:
    """Draw W0 ~ N(0, omega1^2), V0 ~ N(0, omega2^2) at the given shapes."""
    d0, d1, d2 = dims[0], dims[1], dims[2]
    if not scheme.within_budget:
        warnings.warn(
            f"init scale product {scheme.omega1 * scheme.omega2:.3e} exceeds "
            f"budget {scheme.product_budget:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    w = gaussian_matrix(d1, d0, scheme.omega1, RngStream(rng.seed, rng.stream_id))
    v = gaussian_matrix(d2, d1, scheme.omega2, RngStream(rng.seed, rng.stream_id + 1))
    return NetParams(w, v)


def sgd_train(
    theta0: NetParams,
    data: Dataset,
    phi: ActivationProfile,
    lr: float,
    batch_size: int,
    epochs: int,
    rng: RngStream,
) -> TrainingTrace:
    """Minibatch SGD with a per-epoch reshuffle drawn from the stream.

    The minibatch gradient is the gradient of the (unnormalized) squared
    loss restricted to the batch columns, so batch_size = n reproduces
    one full gradient step per epoch.  The full-batch loss is recorded
    once per epoch (index 0 = initialization).
    """
    from .errors import DivergenceError
    from .training import _loss_and_grad_arrays, _sigma_max_small_side

    n = data.n
    if batch_size < 1 or batch_size > n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    gen = rng.generator()
    w, v = theta0.W, theta0.V
    x, y = data.X, data.Y
    cur, gw, gv = _loss_and_grad_arrays(w, v, x, y, phi)
    losses = [cur]
    grad_norms = [math.sqrt(float(np.vdot(gw, gw) + np.vdot(gv, gv)))]
    dists = [0.0]
    chi = _sigma_max_small_side(theta0.V)
    path = 0.0

    for epoch in range(epochs):
        order = gen.permutation(n)
        for start in range(0, n, batch_size):
            cols = order[start : start + batch_size]
            _, gw, gv = _loss_and_grad_arrays(w, v, x[:, cols], y[:, cols], phi)
            snorm = lr * math.sqrt(float(np.vdot(gw, gw) + np.vdot(gv, gv)))
            if not math.isfinite(snorm):
                raise DivergenceError("non-finite minibatch gradient in SGD", epoch)
            path += snorm
            w = w - lr * gw
            v = v - lr * gv
        cur, gw, gv = _loss_and_grad_arrays(w, v, x, y, phi)
        if not math.isfinite(cur):
            raise DivergenceError("non-finite loss in SGD", epoch)
        losses.append(cur)
        grad_norms.append(math.sqrt(float(np.vdot(gw, gw) + np.vdot(gv, gv))))
        dists.append(
            math.sqrt(float(np.vdot(w - theta0.W, w - theta0.W)
                            + np.vdot(v - theta0.V, v - theta0.V)))
        )
        chi = max(chi, _sigma_max_small_side(v))

    return TrainingTrace(
        losses=np.asarray(losses),
        grad_norms=np.asarray(grad_norms),
        path_length=path,
        dist_from_init=np.asarray(dists),
        chi_running_max=chi,
        final_params=NetParams(w, v),
    )


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label pair into a normalized Dataset.

    Pixels are scaled to [0, 1]; every column is centered and normalized
    to unit norm; labels are one-hot encoded and globally rescaled so the
    label matrix has unit Frobenius norm.
    """
    pixels, n, d0 = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if len(labels) != n:
        raise IdxFormatError(
            f"image count {n} does not match label count {len(labels)}"
        )
    x = pixels.reshape(n, d0).T.astype(np.float64) / 255.0
    x = x - x.mean(axis=0, keepdims=True)
    norms = np.linalg.norm(x, axis=0, keepdims=True)
    if np.any(norms < 1e-12):
        raise IdxFormatError("constant image column cannot be normalized")
    x = x / norms
    classes = int(labels.max()) + 1
    return Dataset(x, one_hot_labels(labels, classes))


def _read_header(raw: bytes, path, expected_magic: int, n_dims: int):
    need = 4 * (1 + n_dims)
    if len(raw) < need:
        raise IdxFormatError(f"{path}: header truncated ({len(raw)} bytes)")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    dims = struct.unpack(f">{n_dims}i", raw[4:need])
    return dims, raw[need:]


def _read_idx_images(path):
    raw = Path(path).read_bytes()
    (n, rows, cols), payload = _read_header(raw, path, IDX_IMAGES_MAGIC, 3)
    expected = n * rows * cols
    if len(payload) != expected:
        raise IdxFormatError(
            f"{path}: payload has {len(payload)} bytes, header declares {expected}"
        )
    return np.frombuffer(payload, dtype=np.uint8), n, rows * cols


def _read_idx_labels(path):
    raw = Path(path).read_bytes()
    (n,), payload = _read_header(raw, path, IDX_LABELS_MAGIC, 1)
    if len(payload) != n:
        raise IdxFormatError(
            f"{path}: payload has {len(payload)} bytes, header declares {n}"
        )
    return np.frombuffer(payload, dtype=np.uint8)


# ---------------------------------------------------------------------------
# Configuration


_KNOWN_KEYS = {
    "": {"dims", "activation", "init", "optimizer", "sweep", "constants",
         "data", "teacher", "mc", "output", "master_seed"},
    "dims": {"d0", "d1", "d2", "n"},
    "init": {"omega1", "omega2", "ratio", "product_budget"},
    "optimizer": {"algorithm", "eta", "max_iters", "stop_loss", "batch_size",
                  "epochs", "track_lazy", "dt", "t_end"},
    "sweep": {"ratios", "seeds_per_point", "workers"},
    "constants": {"c_init", "c_eta", "chi_max", "delta1", "delta2", "delta3",
                  "delta4", "k3", "c_universal"},
    "data": {"source", "n_test", "classes", "noise", "train_images",
             "train_labels", "test_images", "test_labels"},
    "teacher": {"stop_loss", "max_iters", "eta"},
    "mc": {"num_samples"},
    "output": {"path"},
}


def _check_keys(section: str, mapping: dict):
    unknown = set(mapping) - _KNOWN_KEYS[section]
    if unknown:
        where = f"section {section!r}" if section else "config"
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class ExperimentConfig:
    """Validated experiment description (unknown keys are fatal)."""

    dims: tuple
    activation: str
    init: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    teacher: dict = field(default_factory=dict)
    mc: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    master_seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        _check_keys("", raw)
        for section in ("dims", "init", "optimizer", "sweep", "constants",
                        "data", "teacher", "mc", "output"):
            sub = raw.get(section, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"section {section!r} must be an object")
            _check_keys(section, sub)
        dims_raw = raw.get("dims")
        if not dims_raw:
            raise ConfigError("config requires a 'dims' section")
        missing = {"d0", "d1", "d2", "n"} - set(dims_raw)
        if missing:
            raise ConfigError(f"dims section missing keys: {sorted(missing)}")
        dims = tuple(int(dims_raw[k]) for k in ("d0", "d1", "d2", "n"))
        if any(v < 1 for v in dims):
            raise ConfigError(f"dims must be positive, got {dims}")
        if "activation" not in raw:
            raise ConfigError("config requires an 'activation' name")
        return cls(
            dims=dims,
            activation=str(raw["activation"]),
            init=dict(raw.get("init", {})),
            optimizer=dict(raw.get("optimizer", {})),
            sweep=dict(raw.get("sweep", {})),
            constants=dict(raw.get("constants", {})),
            data=dict(raw.get("data", {})),
            teacher=dict(raw.get("teacher", {})),
            mc=dict(raw.get("mc", {})),
            output=dict(raw.get("output", {})),
            master_seed=int(raw.get("master_seed", 0)),
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    # -- resolved views ----------------------------------------------------

    def profile(self) -> ActivationProfile:
        try:
            return get_activation(self.activation)
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc

    def product_budget(self) -> float:
        d0, d1 = self.dims[0], self.dims[1]
        budget = self.init.get("product_budget", "auto")
        if budget == "auto":
            return 1.0 / math.sqrt(d0 * d1)
        if budget == "he":
            return 2.0 / math.sqrt(d0 * d1)
        return float(budget)

    def scheme(self, ratio: float | None = None) -> InitScheme:
        if ratio is not None:
            return InitScheme.from_ratio(ratio, self.product_budget())
        if "omega1" in self.init and "omega2" in self.init:
            o1, o2 = float(self.init["omega1"]), float(self.init["omega2"])
            budget = self.init.get("product_budget")
            return InitScheme(o1, o2, float(budget) if budget not in (None, "auto", "he")
                              else max(o1 * o2, self.product_budget()))
        if "ratio" in self.init:
            return InitScheme.from_ratio(float(self.init["ratio"]), self.product_budget())
        return InitScheme.from_ratio(1.0, self.product_budget())

    def probes(self) -> ProbeParams:
        c = self.constants
        return ProbeParams(
            delta1=float(c.get("delta1", 0.5)),
            delta2=float(c.get("delta2", 0.5)),
            delta3=float(c.get("delta3", 3.0)),
            delta4=float(c.get("delta4", 3.0)),
            k3=float(c.get("k3", 1.0)),
            c_universal=float(c.get("c_universal", 1.0)),
        )

    def chi_max(self) -> float:
        return float(self.constants.get("chi_max", 1.0))

    def opt(self, key: str, default):
        return self.optimizer.get(key, default)


def resolve_eta(
    config: ExperimentConfig,
    constants: TheoryConstants,
    grad_f_norm: float,
) -> float:
    """Numeric eta from the config, or the certified formula on 'auto'."""
    eta = config.opt("eta", "auto")
    if eta == "auto":
        return learning_rate(
            constants, grad_f_norm, float(config.constants.get("c_eta", 1.0))
        )
    return float(eta)


# ---------------------------------------------------------------------------
# Teacher-student sweep


@dataclass(frozen=True)
class SweepReport:
    """Per-point records plus per-ratio aggregates of a lazy sweep."""

    records: list
    aggregates: list
    meta: dict

    def to_document(self) -> dict:
        return {"sweep": self.records, "aggregates": self.aggregates,
                "meta": self.meta}


def _certificate_set(config, theta0, data, phi, scheme, h0, expansion, base_extremes):
    """The full certificate block attached to every sweep record."""
    probes = config.probes()
    d1 = config.dims[1]
    try:
        consts = constants_at_init(theta0, data.X, phi, config.chi_max())
        sat, margin = certify_init(h0, consts, float(config.constants.get("c_init", 1e-2)))
        init_margin = margin
    except DegenerateCertificateError:
        consts = None
        sat, init_margin = False, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        width = width_requirement(
            data.X, expansion, phi, probes, scheme.omega1, config.chi_max(), d1
        )
    psi = failure_probability(
        config.dims, data.X, probes, base_extremes, phi.phi_dot_max
    )
    lazy = lazy_regime_report(
        scheme.omega1, scheme.omega2, config.dims, consts, expansion, phi,
        sigma_max_x=width.sigma_max_x, sigma_min_xt=width.sigma_min_xt,
        delta2=probes.delta2,
    )
    return consts, {
        "init_margin": init_margin,
        "init_satisfied": bool(sat),
        "width": {
            "t": width.t,
            "xi": width.xi,
            "d1_required": width.d1_required,
            "d1_actual": width.d1_actual,
            "satisfied": bool(width.satisfied),
            "sigma_min_xt": width.sigma_min_xt,
            "sigma_max_x": width.sigma_max_x,
            "c0_term_dominant": bool(width.c0_term_dominant),
            "notes": width.notes,
        },
        "psi": psi,
        "lazy": {
            "ratio": lazy.ratio,
            "bound_value": lazy.bound_value,
            "classification": lazy.classification,
            "note": lazy.note,
        },
    }


def _train_teacher(config, train: Dataset, phi) -> NetParams:
    """Fit the teacher (same architecture, He-anchored init) on the raw labels.

    The output layer is first solved exactly by least squares on the
    He-initialized features, then both layers are polished with
    backtracking gradient descent until the stop loss or the iteration
    budget is reached.  The student architecture can represent whatever
    state the teacher ends in, so the relabeled targets are exactly
    realizable either way; the threshold guards against degenerate data.
    """
    d0, d1, d2, n = config.dims
    he = InitScheme(math.sqrt(2.0 / d0), math.sqrt(2.0 / d1), 2.0 / math.sqrt(d0 * d1))
    theta0 = init_weights(config.dims, he, RngStream(config.master_seed, STREAM_TEACHER))
    stop = float(config.teacher.get("stop_loss", 1e-2))
    max_iters = int(config.teacher.get("max_iters", 4000))

    feats = phi.fn(theta0.W @ train.X)
    head, *_ = np.linalg.lstsq(feats.T, train.Y.T, rcond=None)
    theta = NetParams(theta0.W, head.T)

    eta_cfg = config.teacher.get("eta", "auto")
    if eta_cfg == "auto":
        consts = constants_at_init(theta, train.X, phi, config.chi_max())
        z0 = forward(theta, train.X, phi)
        eta = learning_rate(consts, 2.0 * float(np.linalg.norm(z0 - train.Y)))
    else:
        eta = float(eta_cfg)
    theta, final = _backtracking_descent(theta, train, phi, eta, max_iters, stop)
    if final > stop:
        raise RuntimeError(
            f"teacher failed to reach loss {stop:.1e} (got {final:.3e} after "
            f"the least-squares head solve and {max_iters} polish iterations)"
        )
    return theta


def _backtracking_descent(theta, data, phi, eta, max_iters, stop_loss):
    """Monotone gradient descent with doubling/halving step search.

    Harness-internal trainer for the teacher only; the certified-step
    optimizer contracts live in ``training.gd_train``.
    """
    from .training import _loss_and_grad_arrays

    w, v = theta.W, theta.V
    x, y = data.X, data.Y
    cur, gw, gv = _loss_and_grad_arrays(w, v, x, y, phi)
    for _ in range(max_iters):
        if cur <= stop_loss:
            break
        eta = min(eta * 2.0, 1.0)
        while eta > 1e-12:
            w_new = w - eta * gw
            v_new = v - eta * gv
            new, gw_new, gv_new = _loss_and_grad_arrays(w_new, v_new, x, y, phi)
            if math.isfinite(new) and new < cur:
                w, v, cur, gw, gv = w_new, v_new, new, gw_new, gv_new
                break
            eta /= 2.0
        else:
            break
    return NetParams(w, v), cur


def _relabel_with_teacher(teacher: NetParams, phi, train: Dataset, test: Dataset):
    """Replace both splits' labels with teacher outputs, rescaled jointly.

    One global factor keeps the labels a scaled teacher function (still
    exactly realizable by the architecture) while both label matrices
    meet the unit-norm cap.
    """
    y_train = forward(teacher, train.X, phi)
    y_test = forward(teacher, test.X, phi)
    worst = max(float(np.linalg.norm(y_train)), float(np.linalg.norm(y_test)))
    scale = (1.0 - 1e-12) / worst if worst > 1.0 else 1.0
    return (
        Dataset(train.X, y_train * scale),
        Dataset(test.X, y_test * scale),
        scale,
    )


def build_splits(config: ExperimentConfig):
    """Train/test datasets per the config's data section."""
    d0, d1, d2, n = config.dims
    src = config.data.get("source", "sphere")
    n_test = int(config.data.get("n_test", n))
    if src == "idx":
        train = load_idx(config.data["train_images"], config.data["train_labels"])
        test = load_idx(config.data["test_images"], config.data["test_labels"])
        return _limit_columns(train, n), _limit_columns(test, n_test)
    if src == "clusters":
        classes = int(config.data.get("classes", d2))
        if classes != d2:
            raise ConfigError(f"data.classes={classes} must equal dims.d2={d2}")
        noise = float(config.data.get("noise", 0.3))
        x_tr, lab_tr = sample_cluster_data(
            n, d0, classes, noise, RngStream(config.master_seed, STREAM_TRAIN_DATA)
        )
        x_te, lab_te = sample_cluster_data(
            n_test, d0, classes, noise, RngStream(config.master_seed, STREAM_TEST_DATA)
        )
        return (
            Dataset(x_tr, one_hot_labels(lab_tr, classes)),
            Dataset(x_te, one_hot_labels(lab_te, classes)),
        )
    if src == "sphere":
        x_tr = sample_unit_sphere_data(n, d0, RngStream(config.master_seed, STREAM_TRAIN_DATA))
        x_te = sample_unit_sphere_data(n_test, d0, RngStream(config.master_seed, STREAM_TEST_DATA))
        gen = RngStream(config.master_seed, STREAM_TRAIN_DATA + 5).generator()
        y_tr = gen.standard_normal((d2, n))
        y_tr /= np.linalg.norm(y_tr)
        y_te = gen.standard_normal((d2, n_test))
        y_te /= np.linalg.norm(y_te)
        return Dataset(x_tr, y_tr), Dataset(x_te, y_te)
    raise ConfigError(f"unknown data source {src!r}")


def _limit_columns(data: Dataset, n: int) -> Dataset:
    if n >= data.n:
        return data
    return data.subset(np.arange(n))


def teacher_student_sweep(config: ExperimentConfig) -> SweepReport:
    """Teacher-student protocol across omega2/omega1 ratios at a fixed budget.

    Trains a teacher on the raw labels, relabels both splits with the
    teacher's outputs, then trains one student per (ratio, seed) pair with
    the lazy twin enabled, recording final losses, the final lazy
    deviation, and the complete certificate set for each point.  Points
    run on a process pool (sweep.workers, default = available cores, at
    most 4); every point draws from its own fixed stream and results are
    assembled in point order, so the report is byte-identical for a given
    master seed regardless of worker count.
    """
    phi = config.profile()
    ratios = [float(r) for r in config.sweep.get("ratios", [0.01, 0.1, 1.0, 10.0, 100.0])]
    seeds = int(config.sweep.get("seeds_per_point", 5))
    if not ratios or seeds < 1:
        raise ConfigError("sweep requires nonempty ratios and seeds_per_point >= 1")
    workers = int(config.sweep.get("workers", min(os.cpu_count() or 1, 4)))

    raw_train, raw_test = build_splits(config)
    teacher = _train_teacher(config, raw_train, phi)
    train, test, label_scale = _relabel_with_teacher(teacher, phi, raw_train, raw_test)

    expansion = hermite_coefficients(phi, order=30)
    base_ext = sym_eig_extremes(expected_gram(train.X, expansion, 1))
    base_extremes = (base_ext.sigma_min, base_ext.sigma_max)

    tasks = []
    for ridx, ratio in enumerate(ratios):
        scheme = config.scheme(ratio)
        for seed_idx in range(seeds):
            point_stream = RngStream(
                config.master_seed, STREAM_POINT_BASE + 10 * (ridx * seeds + seed_idx)
            )
            tasks.append((config, train, test, scheme, ratio, seed_idx,
                          point_stream, expansion, base_extremes))

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_sweep_point_task, tasks))
    else:
        records = [_run_sweep_point_task(t) for t in tasks]

    aggregates = _aggregate(records, ratios)
    meta = {
        "activation": config.activation,
        "dims": {"d0": config.dims[0], "d1": config.dims[1],
                 "d2": config.dims[2], "n": config.dims[3]},
        "product_budget": config.product_budget(),
        "label_scale": label_scale,
        "master_seed": config.master_seed,
        "label_scaling_rule": "teacher outputs rescaled jointly so ||Y_train|| <= 1",
    }
    return SweepReport(records=records, aggregates=aggregates, meta=meta)


def _run_sweep_point_task(args):
    """Picklable wrapper: resolves the activation by name inside the worker."""
    (config, train, test, scheme, ratio, seed_idx, stream,
     expansion, base_extremes) = args
    phi = get_activation(config.activation)
    return _run_sweep_point(config, phi, train, test, scheme, ratio, seed_idx,
                            stream, expansion, base_extremes)


def _run_sweep_point(config, phi, train, test, scheme, ratio, seed_idx, stream,
                     expansion, base_extremes):
    theta0 = init_weights(config.dims, scheme, stream)
    h0 = loss(theta0, train, phi)
    consts, certs = _certificate_set(
        config, theta0, train, phi, scheme, h0, expansion, base_extremes
    )

    algorithm = config.opt("algorithm", "gd")
    if algorithm == "gd":
        if consts is not None:
            z0 = forward(theta0, train.X, phi)
            eta = resolve_eta(config, consts, 2.0 * float(np.linalg.norm(z0 - train.Y)))
        else:
            eta = float(config.opt("eta", 1e-3) if config.opt("eta", "auto") != "auto" else 1e-3)
        trace = gd_train(
            theta0, train, phi, eta,
            int(config.opt("max_iters", 5000)),
            stop_loss=float(config.opt("stop_loss", 1e-10)),
            track_lazy=bool(config.opt("track_lazy", True)),
        )
    elif algorithm == "sgd":
        eta = float(config.opt("eta", 0.01) if config.opt("eta", "auto") != "auto" else 0.01)
        trace = sgd_train(
            theta0, train, phi, eta,
            int(config.opt("batch_size", 128)),
            int(config.opt("epochs", 50)),
            RngStream(stream.seed, stream.stream_id + 5),
        )
    else:
        raise ConfigError(f"unknown optimizer algorithm {algorithm!r}")

    final_test = loss(trace.final_params, test, phi)
    lazy_final = (
        float(trace.lazy_deviation[-1]) if trace.lazy_deviation is not None else None
    )
    confined, length_bound = (
        confinement_check(trace, consts, h0) if consts is not None else (False, 0.0)
    )
    fitted = None
    if len(trace.losses) >= 10 and trace.losses[0] > 0:
        _, fitted, _ = rate_certificate(trace, consts, eta)
    return {
        "ratio": ratio,
        "seed": seed_idx,
        "omega1": scheme.omega1,
        "omega2": scheme.omega2,
        "eta": eta,
        "h0": h0,
        "final_train_loss": trace.final_loss,
        "final_test_loss": final_test,
        "lazy_deviation_final": lazy_final,
        "iterations": trace.iterations,
        "confined": bool(confined),
        "length_bound": length_bound,
        "chi_running_max": trace.chi_running_max,
        "fitted_rate": fitted,
        "certificates": certs,
    }


def _aggregate(records, ratios):
    out = []
    for ratio in ratios:
        rows = [r for r in records if r["ratio"] == ratio]
        train_losses = np.asarray([r["final_train_loss"] for r in rows])
        test_losses = np.asarray([r["final_test_loss"] for r in rows])
        lazys = np.asarray([
            r["lazy_deviation_final"] for r in rows
            if r["lazy_deviation_final"] is not None
        ])
        entry = {
            "ratio": ratio,
            "median_final_train_loss": float(np.median(train_losses)),
            "median_final_test_loss": float(np.median(test_losses)),
            "train_loss_band_95": [
                float(np.percentile(train_losses, 2.5)),
                float(np.percentile(train_losses, 97.5)),
            ],
        }
        if len(lazys):
            entry["median_lazy_deviation_final"] = float(np.median(lazys))
            entry["lazy_deviation_band_95"] = [
                float(np.percentile(lazys, 2.5)),
                float(np.percentile(lazys, 97.5)),
            ]
        out.append(entry)
    return out


# ---------------------------------------------------------------------------
# Report emission

CSV_COLUMNS = ["iter", "loss", "grad_norm", "dist_from_init", "lazy_deviation"]


def _trace_rows(trace):
    lazy = getattr(trace, "lazy_deviation", None)
    grads = getattr(trace, "grad_norms", None)
    for i in range(len(trace.losses)):
        yield [
            i,
            repr(float(trace.losses[i])),
            repr(float(grads[i])) if grads is not None else "",
            repr(float(trace.dist_from_init[i])),
            repr(float(lazy[i])) if lazy is not None else "",
        ]


def _trace_document(trace) -> dict:
    doc = {
        "iter": list(range(len(trace.losses))),
        "loss": [float(v) for v in trace.losses],
        "dist_from_init": [float(v) for v in trace.dist_from_init],
        "path_length": float(trace.path_length),
    }
    if isinstance(trace, FlowTrace):
        doc["times"] = [float(v) for v in trace.times]
    else:
        doc["grad_norm"] = [float(v) for v in trace.grad_norms]
        doc["chi_running_max"] = float(trace.chi_running_max)
        if trace.lazy_deviation is not None:
            doc["lazy_deviation"] = [float(v) for v in trace.lazy_deviation]
    return doc


def render_report(report, fmt: str) -> str:
    """Serialize a trace or document to its textual form (stable bytes)."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown report format {fmt!r}")
    if isinstance(report, (TrainingTrace, FlowTrace)):
        if fmt == "json":
            return _stable_json(_trace_document(report))
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(_trace_rows(report))
        return buf.getvalue()
    if isinstance(report, SweepReport):
        if fmt == "json":
            return _stable_json(report.to_document())
        return _sweep_csv(report)
    if isinstance(report, dict):
        if fmt == "csv":
            raise ConfigError("certificate documents serialize to JSON only")
        return _stable_json(report)
    raise ConfigError(f"cannot serialize report of type {type(report).__name__}")


def _sweep_csv(report: SweepReport) -> str:
    cols = ["ratio", "seed", "omega1", "omega2", "final_train_loss",
            "final_test_loss", "lazy_deviation_final", "confined",
            "fitted_rate", "init_margin", "psi", "width_satisfied",
            "lazy_class"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in report.records:
        writer.writerow([
            repr(float(r["ratio"])), r["seed"], repr(float(r["omega1"])),
            repr(float(r["omega2"])), repr(float(r["final_train_loss"])),
            repr(float(r["final_test_loss"])),
            "" if r["lazy_deviation_final"] is None else repr(float(r["lazy_deviation_final"])),
            int(r["confined"]),
            "" if r["fitted_rate"] is None else repr(float(r["fitted_rate"])),
            repr(float(r["certificates"]["init_margin"])),
            repr(float(r["certificates"]["psi"])),
            int(r["certificates"]["width"]["satisfied"]),
            r["certificates"]["lazy"]["classification"],
        ])
    return buf.getvalue()


def _stable_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit_report(report, path, fmt: str = "json"):
    """Write a report to disk; identical inputs produce identical bytes."""
    text = render_report(report, fmt)
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
