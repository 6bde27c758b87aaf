"""Frame-level encoder and the two-view training loop.

The encoder is a small MLP; on top of its output sit a linear projection
with L2 normalization feeding the codebook (swapped-prediction loss) and a
linear classifier for the pseudo-label loss. Gradients are derived by hand and
applied with plain gradient descent on a linear warmup / linear decay schedule.
"""

import csv
import itertools
import logging
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_frames, check_random_state, check_units
from .auxiliary import aux_loss, aux_loss_grad, total_loss
from .formats import read_checkpoint, write_checkpoint
from .spin import (
    Codebook,
    code_probs,
    code_scores,
    l2_normalize,
    sinkhorn_smooth,
    spin_loss,
    spin_loss_grad,
)

logger = logging.getLogger(__name__)

NONLINEARITIES = ("tanh", "relu")
METRIC_FIELDS = ("step", "lr", "l_spin", "l_aux", "l_total", "usage", "grad_norm")


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 16
    hidden_dim: int = 64
    n_layers: int = 2
    proj_dim: int = 32
    nonlinearity: str = "tanh"

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "n_layers", "proj_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"nonlinearity must be one of {NONLINEARITIES}, got {self.nonlinearity!r}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    ``freeze_below`` keeps encoder layers ``0 .. freeze_below - 1`` fixed;
    ``freeze_heads`` additionally fixes the projection, codebook and classifier.
    ``lam`` may be 0 to train with the swapped-prediction loss alone.
    """

    total_updates: int = 10_000
    frames_per_batch: int = 256
    lr_peak: float = 1e-4
    lr_floor: float = 1e-6
    warmup_fraction: float = 0.5
    lam: float = 5.0
    codebook_size: int = 32
    aux_vocab: int = 0
    freeze_below: int = 0
    freeze_heads: bool = False
    temperature: float = 0.1
    sinkhorn_eps: float = 0.05
    sinkhorn_iters: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.total_updates < 0:
            raise ValueError("total_updates must be >= 0")
        if not 0 < self.lr_floor < self.lr_peak:
            raise ValueError(f"need 0 < lr_floor < lr_peak, got {self.lr_floor}, {self.lr_peak}")
        if not 0 < self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.codebook_size < 1:
            raise ValueError("codebook_size must be >= 1")
        if self.frames_per_batch < self.codebook_size:
            raise ValueError(
                f"frames_per_batch ({self.frames_per_batch}) must be >= codebook_size "
                f"({self.codebook_size}) for balanced assignments")
        if self.freeze_below < 0:
            raise ValueError("freeze_below must be >= 0")
        if self.temperature <= 0 or self.sinkhorn_eps <= 0 or self.sinkhorn_iters < 1:
            raise ValueError("temperature and sinkhorn_eps must be > 0, sinkhorn_iters >= 1")


def lr_at(step, cfg):
    """Linear ramp from ``lr_floor`` to ``lr_peak``, then linear decay back."""
    total = cfg.total_updates
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if total == 0:
        return cfg.lr_floor
    warm = cfg.warmup_fraction * total
    if step <= warm:
        frac = step / warm
    else:
        frac = (total - step) / (total - warm)
    # Convex combination keeps both endpoints exact in floating point.
    return (1.0 - frac) * cfg.lr_floor + frac * cfg.lr_peak


# ---------------------------------------------------------------------------
# parameters and forward pass


def init_params(enc, n_codes, n_labels, seed=0):
    rng = check_random_state(seed)
    params = {}
    fan_in = enc.input_dim
    for i in range(enc.n_layers):
        params[f"enc.{i}.W"] = rng.standard_normal((fan_in, enc.hidden_dim)) / np.sqrt(fan_in)
        params[f"enc.{i}.b"] = np.zeros(enc.hidden_dim)
        fan_in = enc.hidden_dim
    params["proj.W"] = rng.standard_normal((enc.hidden_dim, enc.proj_dim)) / np.sqrt(enc.hidden_dim)
    params["proj.b"] = np.zeros(enc.proj_dim)
    params["codebook"] = l2_normalize(rng.standard_normal((n_codes, enc.proj_dim)))
    params["aux.W"] = rng.standard_normal((enc.hidden_dim, max(n_labels, 1))) / np.sqrt(enc.hidden_dim)
    params["aux.b"] = np.zeros(max(n_labels, 1))
    return params


def _act(A, kind):
    return np.tanh(A) if kind == "tanh" else np.maximum(A, 0.0)


def _act_grad(A, h, kind):
    return 1.0 - h ** 2 if kind == "tanh" else (A > 0).astype(np.float64)


def forward(X, params, enc):
    """Encoder output ``H`` and the per-layer activations (input first)."""
    X = check_frames(X, "features")
    if X.shape[1] != enc.input_dim:
        raise ValueError(f"expected {enc.input_dim} input features, got {X.shape[1]}")
    acts = [X]
    pre = []
    h = X
    for i in range(enc.n_layers):
        A = h @ params[f"enc.{i}.W"] + params[f"enc.{i}.b"]
        h = _act(A, enc.nonlinearity)
        pre.append(A)
        acts.append(h)
    return h, acts, pre


def _embed(H, params):
    Y = H @ params["proj.W"] + params["proj.b"]
    norms = np.linalg.norm(Y, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("projected row has (near) zero norm")
    return Y / norms, norms


def _codebook(params, cfg):
    return Codebook(params["codebook"], cfg.temperature)


def compute_targets(params, clean, pert, enc, cfg):
    """Sinkhorn-smoothed assignments of both views at the current parameters."""
    cb = _codebook(params, cfg)
    out = []
    for X in (clean, pert):
        H, _, _ = forward(X, params, enc)
        Z, _ = _embed(H, params)
        out.append(sinkhorn_smooth(code_scores(Z, cb), cfg.sinkhorn_eps, cfg.sinkhorn_iters))
    return tuple(out)


def assign_codes(X, state):
    """Most likely code per frame under ``state``."""
    H, _, _ = forward(X, state.params, state.enc)
    Z, _ = _embed(H, state.params)
    return code_probs(Z, _codebook(state.params, state.cfg)).argmax(axis=1)


def loss_and_grads(params, clean, pert, labels, enc, cfg, targets=None):
    """Losses and gradients of the combined objective.

    ``targets`` defaults to fresh Sinkhorn assignments; pass them explicitly to
    hold them fixed (they never receive gradient).

    Returns
    -------
    metrics : dict
    grads : dict
        Same keys as ``params``.
    targets : tuple of ndarray
    """
    B = clean.shape[0]
    if pert.shape != clean.shape:
        raise ValueError(f"views differ in shape: {clean.shape} vs {pert.shape}")
    if B < cfg.codebook_size:
        raise ValueError(f"batch of {B} frames is smaller than the codebook ({cfg.codebook_size})")
    cb = _codebook(params, cfg)
    views = []
    for X in (clean, pert):
        H, acts, pre = forward(X, params, enc)
        Z, norms = _embed(H, params)
        views.append((H, acts, pre, Z, norms))
    if targets is None:
        targets = tuple(
            sinkhorn_smooth(code_scores(v[3], cb), cfg.sinkhorn_eps, cfg.sinkhorn_iters) for v in views)
    Q, Q_pert = targets
    P = code_probs(views[0][3], cb)
    P_pert = code_probs(views[1][3], cb)
    l_spin = spin_loss(P, P_pert, Q, Q_pert)
    dZ, dZ_pert, dC = spin_loss_grad(views[0][3], views[1][3], cb, Q, Q_pert)

    use_aux = cfg.lam > 0
    if use_aux:
        y = check_units(labels, "labels", vocab=params["aux.b"].size)
        if y.size != B:
            raise ValueError(f"{y.size} labels for {B} frames")
        logits = [v[0] @ params["aux.W"] + params["aux.b"] for v in views]
        l_aux = aux_loss(logits[0], logits[1], y)
        dA = [cfg.lam * g for g in aux_loss_grad(logits[0], logits[1], y)]
        l_total = total_loss(l_spin, l_aux, cfg.lam)
    else:
        l_aux = float("nan") if labels is None else _safe_aux(params, views, labels)
        dA = [None, None]
        l_total = l_spin

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    grads["codebook"] += dC
    for (H, acts, pre, Z, norms), dz, da in zip(views, (dZ, dZ_pert), dA):
        dY = (dz - Z * np.sum(Z * dz, axis=1, keepdims=True)) / norms
        grads["proj.W"] += H.T @ dY
        grads["proj.b"] += dY.sum(axis=0)
        dH = dY @ params["proj.W"].T
        if da is not None:
            grads["aux.W"] += H.T @ da
            grads["aux.b"] += da.sum(axis=0)
            dH = dH + da @ params["aux.W"].T
        for i in reversed(range(enc.n_layers)):
            dA_i = dH * _act_grad(pre[i], acts[i + 1], enc.nonlinearity)
            grads[f"enc.{i}.W"] += acts[i].T @ dA_i
            grads[f"enc.{i}.b"] += dA_i.sum(axis=0)
            dH = dA_i @ params[f"enc.{i}.W"].T

    assign = np.concatenate([P.argmax(axis=1), P_pert.argmax(axis=1)])
    metrics = {
        "l_spin": float(l_spin),
        "l_aux": float(l_aux),
        "l_total": float(l_total),
        "usage": len(np.unique(assign)) / cfg.codebook_size,
    }
    return metrics, grads, targets


def _safe_aux(params, views, labels):
    y = np.asarray(labels, dtype=np.int64)
    if y.size != views[0][0].shape[0] or y.min() < 0 or y.max() >= params["aux.b"].size:
        return float("nan")
    logits = [v[0] @ params["aux.W"] + params["aux.b"] for v in views]
    return aux_loss(logits[0], logits[1], y)


def trainable(name, enc, cfg):
    if name.startswith("enc."):
        return int(name.split(".")[1]) >= cfg.freeze_below
    return not cfg.freeze_heads


@dataclass
class StepMetrics:
    step: int
    lr: float
    l_spin: float
    l_aux: float
    l_total: float
    usage: float
    grad_norm: float

    def row(self):
        return [getattr(self, f) for f in METRIC_FIELDS]


class TrainState:
    """Parameters plus the configuration and step counter that go with them."""

    def __init__(self, params, enc, cfg, step=0):
        self.params = params
        self.enc = enc
        self.cfg = cfg
        self.step = step

    @classmethod
    def initial(cls, enc, cfg):
        return cls(init_params(enc, cfg.codebook_size, cfg.aux_vocab, cfg.seed), enc, cfg)

    def copy(self):
        return TrainState({k: v.copy() for k, v in self.params.items()}, self.enc, self.cfg, self.step)

    def save(self, path):
        blob = dict(self.params)
        blob["meta.temperature"] = np.array([[self.cfg.temperature]])
        blob["meta.nonlinearity"] = np.array([[NONLINEARITIES.index(self.enc.nonlinearity)]], dtype=float)
        blob["meta.step"] = np.array([[self.step]], dtype=float)
        write_checkpoint(path, blob)


def load_state(path, cfg=None):
    """Rebuild a :class:`TrainState` from a checkpoint written by :meth:`TrainState.save`."""
    blob = read_checkpoint(path)
    meta = {k[5:]: float(v[0, 0]) for k, v in blob.items() if k.startswith("meta.")}
    params = {k: v for k, v in blob.items() if not k.startswith("meta.")}
    for k in list(params):
        if k.endswith(".b"):
            params[k] = params[k].ravel()
    n_layers = len([k for k in params if k.startswith("enc.") and k.endswith(".W")])
    enc = EncoderConfig(
        input_dim=params["enc.0.W"].shape[0],
        hidden_dim=params["enc.0.W"].shape[1],
        n_layers=n_layers,
        proj_dim=params["proj.W"].shape[1],
        nonlinearity=NONLINEARITIES[int(meta.get("nonlinearity", 0))],
    )
    if cfg is None:
        K = params["codebook"].shape[0]
        cfg = TrainConfig(total_updates=0, frames_per_batch=K, codebook_size=K,
                          aux_vocab=params["aux.b"].size, temperature=meta.get("temperature", 0.1))
    return TrainState(params, enc, cfg, int(meta.get("step", 0)))


def train_step(clean, perturbed, labels, state):
    """One gradient-descent update of every unfrozen parameter, in place."""
    cfg, enc = state.cfg, state.enc
    clean = check_frames(clean, "clean features")
    perturbed = check_frames(perturbed, "perturbed features")
    if clean.shape[0] < cfg.codebook_size:
        raise ValueError(
            f"batch of {clean.shape[0]} frames is smaller than the codebook ({cfg.codebook_size})")
    lr = lr_at(min(state.step, cfg.total_updates), cfg)
    metrics, grads, _ = loss_and_grads(state.params, clean, perturbed, labels, enc, cfg)
    sq = 0.0
    updated_codebook = False
    for name, g in grads.items():
        if not trainable(name, enc, cfg):
            continue
        sq += float(np.sum(g ** 2))
        state.params[name] = state.params[name] - lr * g
        updated_codebook |= name == "codebook"
    if updated_codebook:
        state.params["codebook"] = l2_normalize(state.params["codebook"])
    out = StepMetrics(step=state.step, lr=lr, grad_norm=float(np.sqrt(sq)), **metrics)
    state.step += 1
    return out


def train(corpus, enc, cfg, repeat=False, log_path=None, checkpoint_path=None, state=None):
    """Run ``cfg.total_updates`` steps over ``(clean, perturbed, labels)`` batches.

    Raises if ``corpus`` runs dry before then, unless ``repeat`` is set, in
    which case it is cycled.
    """
    state = TrainState.initial(enc, cfg) if state is None else state
    batches = itertools.cycle(corpus) if repeat else iter(corpus)
    log = []
    writer = None
    fh = open(log_path, "w", newline="", encoding="utf-8") if log_path else None
    try:
        if fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRIC_FIELDS)
        for i in range(cfg.total_updates):
            try:
                clean, pert, labels = next(batches)
            except StopIteration:
                raise RuntimeError(
                    f"corpus exhausted after {i} of {cfg.total_updates} updates; "
                    "pass repeat=True to cycle it") from None
            m = train_step(clean, pert, labels, state)
            log.append(m)
            if writer:
                writer.writerow(m.row())
            if i % 100 == 0:
                logger.info("step %d lr %.3g total %.4f usage %.2f", m.step, m.lr, m.l_total, m.usage)
    finally:
        if fh:
            fh.close()
    if checkpoint_path:
        state.save(checkpoint_path)
    return state, log


def frame_batches(clean, perturbed, labels, batch_size, seed=0):
    """Endless stream of random frame batches drawn from aligned arrays."""
    rng = check_random_state(seed)
    n = clean.shape[0]
    if batch_size > n:
        raise ValueError(f"batch of {batch_size} frames requested from {n}")
    while True:
        idx = rng.choice(n, size=batch_size, replace=False)
        yield clean[idx], perturbed[idx], None if labels is None else labels[idx]


class RSpin(TransformerMixin, BaseEstimator):
    """Two-view clustering fine-tuning of a frame encoder with a pseudo-label loss.

    ``fit(X, y, X_perturbed=...)`` trains on aligned clean / perturbed frames
    and frame-level pseudo-labels ``y`` (dense ids ``0..V-1``). ``transform``
    returns encoder outputs and ``predict`` the most likely code per frame.

    The defaults are desk-scale settings; the learning-rate schedule has the
    usual warmup-then-decay shape but a larger peak because training uses
    plain gradient descent on a small network.
    """

    def __init__(self, codebook_size=32, lam=5.0, n_layers=2, hidden_dim=64, proj_dim=32,
                 nonlinearity="tanh", total_updates=500, frames_per_batch=256,
                 lr_peak=2.0, lr_floor=1e-2, warmup_fraction=0.5, freeze_below=0,
                 temperature=0.1, sinkhorn_eps=0.05, sinkhorn_iters=3, random_state=0):
        self.codebook_size = codebook_size
        self.lam = lam
        self.n_layers = n_layers
        self.hidden_dim = hidden_dim
        self.proj_dim = proj_dim
        self.nonlinearity = nonlinearity
        self.total_updates = total_updates
        self.frames_per_batch = frames_per_batch
        self.lr_peak = lr_peak
        self.lr_floor = lr_floor
        self.warmup_fraction = warmup_fraction
        self.freeze_below = freeze_below
        self.temperature = temperature
        self.sinkhorn_eps = sinkhorn_eps
        self.sinkhorn_iters = sinkhorn_iters
        self.random_state = random_state

    def _configs(self, input_dim, n_labels):
        enc = EncoderConfig(input_dim=input_dim, hidden_dim=self.hidden_dim, n_layers=self.n_layers,
                            proj_dim=self.proj_dim, nonlinearity=self.nonlinearity)
        cfg = TrainConfig(
            total_updates=self.total_updates, frames_per_batch=self.frames_per_batch,
            lr_peak=self.lr_peak, lr_floor=self.lr_floor, warmup_fraction=self.warmup_fraction,
            lam=self.lam, codebook_size=self.codebook_size, aux_vocab=n_labels,
            freeze_below=self.freeze_below, temperature=self.temperature,
            sinkhorn_eps=self.sinkhorn_eps, sinkhorn_iters=self.sinkhorn_iters,
            seed=self.random_state)
        return enc, cfg

    def fit(self, X, y=None, X_perturbed=None):
        X = check_frames(X)
        if X_perturbed is None:
            raise ValueError("RSpin needs the perturbed view: fit(X, y, X_perturbed=...)")
        Xp = check_frames(X_perturbed, "X_perturbed")
        if Xp.shape != X.shape:
            raise ValueError(f"views differ in shape: {X.shape} vs {Xp.shape}")
        if y is not None:
            y = check_units(y, "y")
            if y.size != X.shape[0]:
                raise ValueError(f"{y.size} labels for {X.shape[0]} frames")
        n_labels = int(y.max()) + 1 if y is not None else 0
        if self.lam > 0 and y is None:
            raise ValueError("pseudo-labels y are required when lam > 0")
        enc, cfg = self._configs(X.shape[1], n_labels)
        batches = frame_batches(X, Xp, y, cfg.frames_per_batch, seed=[cfg.seed, 1])
        self.state_, self.history_ = train(batches, enc, cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def _forward(self, X):
        check_is_fitted(self, "state_")
        return forward(X, self.state_.params, self.state_.enc)

    def transform(self, X):
        return self._forward(X)[0]

    def layer_outputs(self, X):
        """Activations of every encoder layer, input included."""
        return self._forward(X)[1]

    def embed(self, X):
        return _embed(self.transform(X), self.state_.params)[0]

    def predict_proba(self, X):
        return code_probs(self.embed(X), _codebook(self.state_.params, self.state_.cfg))

    def predict(self, X):
        check_is_fitted(self, "state_")
        return assign_codes(X, self.state_)

    def codebook_usage(self, X):
        return len(np.unique(self.predict(X))) / self.codebook_size

    def save(self, path):
        check_is_fitted(self, "state_")
        self.state_.save(path)


def config_dict(enc, cfg):
    out = {f"encoder.{k}": v for k, v in asdict(enc).items()}
    out.update({f"train.{k}": v for k, v in asdict(cfg).items()})
    return out
