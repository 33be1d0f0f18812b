"""The four domain-generalization trainers: AGG, FW-AGG, ET and FWET.

A model is a softmax feature-weight vector w (optional), a feature-transform
network theta and a regressor network psi; prediction is
psi(theta(softmax(w) * x)). ET regularizes theta by requiring the transformed
features of subject s to score well under a frozen regressor trained on
subject j, with the theta gradient of that term clipped element-wise. FWET is
ET with feature weighting enabled. Optional extra regularizers: epic (shared
regressor under frozen domain feature extractors) and epir (frozen randomly
initialized regressor, redrawn each epoch).
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from . import numcore
from .errors import ConfigurationError, NotApplicableError, ShapeError
from .numcore import Network, OptState, backward, backward_sq, clip_elems, forward
from .sigproc import TrialTable
from .util import substream

VARIANTS = ("agg", "fw-agg", "et", "fwet")


@dataclass
class TrainConfig:
    lam: float = 0.1  # weight of the episodic feature-transfer term
    batch_size: int = 32
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-5
    max_epochs: int = 500
    patience: int = 10
    val_frac: float = 0.10
    clip_lo: float = -10.0
    clip_hi: float = 10.0
    regularizers: tuple[str, ...] = ("epif",)
    reg_weights: dict = field(default_factory=lambda: {"epic": 0.1, "epir": 0.1})
    theta_hidden: tuple[int, ...] = (40,)
    psi_hidden: tuple[int, ...] = (40,)
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lam must be >= 0")
        if not 0 < self.val_frac < 1:
            raise ConfigurationError("val_frac must be in (0, 1)")
        if self.clip_lo >= self.clip_hi:
            raise ConfigurationError("clip range must satisfy lo < hi")
        for r in self.regularizers:
            if r not in ("epif", "epic", "epir"):
                raise ConfigurationError(f"unknown regularizer {r!r}")


@dataclass
class SharedModel:
    w: np.ndarray | None  # raw feature weights; None when FW is disabled
    theta: Network
    psi: Network

    @property
    def fw_enabled(self) -> bool:
        return self.w is not None

    @property
    def input_dim(self) -> int:
        return self.theta.input_dim

    def params(self) -> list[np.ndarray]:
        head = [self.w] if self.w is not None else []
        return head + self.theta.params() + self.psi.params()

    def decay_mask(self) -> list[bool]:
        # the feature-weight vector is exempt from weight decay
        head = [False] if self.w is not None else []
        return head + [True] * (2 * len(self.theta.layers) + 2 * len(self.psi.layers))

    def copy(self) -> "SharedModel":
        return copy.deepcopy(self)


@dataclass
class DomainModel:
    subject_id: str
    w: np.ndarray | None
    theta: Network
    psi: Network

    def params(self) -> list[np.ndarray]:
        head = [self.w] if self.w is not None else []
        return head + self.theta.params() + self.psi.params()

    def decay_mask(self) -> list[bool]:
        head = [False] if self.w is not None else []
        return head + [True] * (2 * len(self.theta.layers) + 2 * len(self.psi.layers))


def softmax_weights(w: np.ndarray) -> np.ndarray:
    """Stable softmax of the raw feature weights; positive, sums to 1."""
    w = np.asarray(w, dtype=np.float64)
    e = np.exp(w - np.max(w))
    return e / e.sum()


def apply_fw(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Element-wise product of softmax(w) with x (vector or batch rows)."""
    return softmax_weights(w) * np.asarray(x, dtype=np.float64)


def _softmax_backward(w_hat: np.ndarray, grad_hat: np.ndarray) -> np.ndarray:
    # dL/dw through the softmax Jacobian diag(wh) - wh wh^T
    return w_hat * (grad_hat - np.dot(grad_hat, w_hat))


def build_model(input_dim: int, cfg: TrainConfig, rng: np.random.Generator,
                fw: bool) -> SharedModel:
    """Uniformly initialized model; w starts at the all-ones vector."""
    theta_dims = [input_dim, *cfg.theta_hidden]
    theta = numcore.make_network(theta_dims, ["relu"] * len(cfg.theta_hidden))
    psi_dims = [cfg.theta_hidden[-1], *cfg.psi_hidden, 1]
    psi = numcore.make_network(psi_dims, ["relu"] * len(cfg.psi_hidden) + ["identity"])
    numcore.init_uniform(theta, rng)
    numcore.init_uniform(psi, rng)
    w = np.ones(input_dim) if fw else None
    return SharedModel(w=w, theta=theta, psi=psi)


def build_domain_model(subject_id: str, input_dim: int, cfg: TrainConfig,
                       rng: np.random.Generator, fw: bool) -> DomainModel:
    m = build_model(input_dim, cfg, rng, fw)
    return DomainModel(subject_id=subject_id, w=m.w, theta=m.theta, psi=m.psi)


def predict(model, x: np.ndarray) -> np.ndarray:
    """yhat = psi(theta(softmax(w) * x)); returns a scalar per input row."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.theta.input_dim:
        raise ShapeError("input feature dimension mismatch")
    xt = apply_fw(model.w, x) if model.w is not None else x
    h, _ = forward(model.theta, xt)
    out, _ = forward(model.psi, h)
    out = out[:, 0]
    return float(out[0]) if single else out


def _path(w, theta, psi, X, y, need_w=False, need_theta=False, need_psi=False):
    """Mean squared loss of psi(theta(fw(X))) and requested analytic gradients."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if w is not None:
        w_hat = softmax_weights(w)
        xt = w_hat * X
    else:
        xt = X
    h, cache_t = forward(theta, xt)
    _, cache_p = forward(psi, h)
    loss, gpsi, gh = backward_sq(psi, cache_p, y)
    gw = gtheta = None
    if need_theta or need_w:
        gtheta, gxt = backward(theta, cache_t, gh)
        if need_w and w is not None:
            grad_hat = np.sum(gxt * X, axis=0)
            gw = _softmax_backward(w_hat, grad_hat)
    return loss, gw, gtheta, (gpsi if need_psi else None)


# --- loss values -----------------------------------------------------------

def loss_agg(model, X, y) -> float:
    """Pooled squared loss of the shared (or domain) model on a batch."""
    loss, *_ = _path(model.w, model.theta, model.psi, X, y)
    return loss


def loss_ft(shared: SharedModel, frozen_psi_j: Network, X, y) -> float:
    """Episodic feature-transfer loss: shared w/theta through a frozen foreign regressor."""
    loss, *_ = _path(shared.w, shared.theta, frozen_psi_j, X, y)
    return loss


def loss_epic(shared: SharedModel, dom_j: DomainModel, X, y) -> float:
    """Shared regressor under subject j's frozen feature path (w_j, theta_j)."""
    loss, *_ = _path(dom_j.w, dom_j.theta, shared.psi, X, y)
    return loss


def loss_epir(shared: SharedModel, random_psi: Network, X, y) -> float:
    """Shared w/theta under a frozen randomly initialized regressor."""
    loss, *_ = _path(shared.w, shared.theta, random_psi, X, y)
    return loss


def loss_et(shared: SharedModel, dom_j: DomainModel, X, y, cfg: TrainConfig,
            random_psi: Network | None = None) -> float:
    """L_AGG on the batch plus lam * L_FT, plus any enabled extra regularizers."""
    total = loss_agg(shared, X, y) + cfg.lam * loss_ft(shared, dom_j.psi, X, y)
    if "epic" in cfg.regularizers:
        total += cfg.reg_weights.get("epic", 0.1) * loss_epic(shared, dom_j, X, y)
    if "epir" in cfg.regularizers:
        if random_psi is None:
            raise ConfigurationError("epir enabled but no random regressor supplied")
        total += cfg.reg_weights.get("epir", 0.1) * loss_epir(shared, random_psi, X, y)
    return total


# --- gradients -------------------------------------------------------------

def _zeros_like_params(params):
    return [np.zeros_like(p) for p in params]


def grad_agg(model, X, y):
    """(loss, grads) for the plain pooled loss; grads match model.params() order."""
    need_w = model.w is not None
    loss, gw, gtheta, gpsi = _path(model.w, model.theta, model.psi, X, y,
                                   need_w=need_w, need_theta=True, need_psi=True)
    head = [gw] if need_w else []
    return loss, head + gtheta + gpsi


def grad_et(shared: SharedModel, dom_j: DomainModel, X, y, cfg: TrainConfig,
            random_psi: Network | None = None):
    """Gradient of the episodic objective w.r.t. the shared parameters.

    The theta gradients of the feature-transfer and epir terms are clipped
    element-wise to the configured range before being weighted and accumulated;
    frozen networks receive no gradient. Returns
    (loss, grads, clipped_ft_theta_grads).
    """
    need_w = shared.w is not None
    loss_a, gw_a, gth_a, gps_a = _path(shared.w, shared.theta, shared.psi, X, y,
                                       need_w=need_w, need_theta=True, need_psi=True)
    total = loss_a
    gw = gw_a.copy() if need_w else None
    gtheta = [g.copy() for g in gth_a]
    gpsi = [g.copy() for g in gps_a]
    clipped_ft = []

    if cfg.lam != 0.0:
        loss_f, gw_f, gth_f, _ = _path(shared.w, shared.theta, dom_j.psi, X, y,
                                       need_w=need_w, need_theta=True)
        total += cfg.lam * loss_f
        clipped_ft = [clip_elems(g, cfg.clip_lo, cfg.clip_hi) for g in gth_f]
        for acc, g in zip(gtheta, clipped_ft):
            acc += cfg.lam * g
        if need_w:
            gw += cfg.lam * gw_f

    if "epic" in cfg.regularizers:
        wt = cfg.reg_weights.get("epic", 0.1)
        loss_c, _, _, gps_c = _path(dom_j.w, dom_j.theta, shared.psi, X, y,
                                    need_psi=True)
        total += wt * loss_c
        for acc, g in zip(gpsi, gps_c):
            acc += wt * g

    if "epir" in cfg.regularizers:
        if random_psi is None:
            raise ConfigurationError("epir enabled but no random regressor supplied")
        wt = cfg.reg_weights.get("epir", 0.1)
        loss_r, gw_r, gth_r, _ = _path(shared.w, shared.theta, random_psi, X, y,
                                       need_w=need_w, need_theta=True)
        total += wt * loss_r
        for acc, g in zip(gtheta, gth_r):
            acc += wt * clip_elems(g, cfg.clip_lo, cfg.clip_hi)
        if need_w:
            gw += wt * gw_r

    head = [gw] if need_w else []
    return total, head + gtheta + gpsi, clipped_ft


# --- batch scheduling ------------------------------------------------------

class _BatchQueue:
    """Without-replacement batch sampler over one subject's row indices."""

    def __init__(self, n_rows: int, batch_size: int, rng: np.random.Generator):
        self.n = n_rows
        self.batch = min(batch_size, n_rows)
        self.rng = rng
        self.order = rng.permutation(n_rows)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        idx = self.order[self.pos : self.pos + self.batch]
        self.pos += self.batch
        return idx


def _split_train_val(table: TrialTable, val_frac: float):
    """First val_frac of the subject's rows (by time) go to validation."""
    n = table.n_trials
    order = np.argsort(table.trial_times, kind="stable")
    n_val = int(round(val_frac * n))
    if n >= 2:
        n_val = min(max(n_val, 1), n - 1)
    else:
        n_val = 0
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    return train_idx, val_idx


# --- training loops --------------------------------------------------------

def _sgd(model, grads, opt):
    numcore.sgd_step(model.params(), grads, opt, model.decay_mask())


def shared_step_agg(model, X, y, opt: OptState) -> float:
    """One pooled-loss SGD step on a (shared or domain) model; returns the batch loss."""
    loss, grads = grad_agg(model, X, y)
    _sgd(model, grads, opt)
    return loss


def warmup(domain_models: list[DomainModel], train_sets: dict, opts: dict,
           cfg: TrainConfig, rng: np.random.Generator) -> None:
    """One epoch of mini-batch training of each domain model on its own subject."""
    for dm in domain_models:
        X, y = train_sets[dm.subject_id]
        order = rng.permutation(len(y))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            shared_step_agg(dm, X[idx], y[idx], opts[dm.subject_id])


def train_epoch_fwet(shared: SharedModel, domain_models: list[DomainModel],
                     train_sets: dict, queues: dict, shared_opt: OptState,
                     domain_opts: dict, cfg: TrainConfig,
                     random_psi: Network | None = None, monitor=None) -> float:
    """One episodic epoch: a domain step per subject, then a shared step per
    ordered subject pair (s, j), each on a fresh batch from s.

    Returns the mean shared-step loss. ``monitor`` (if given) is called as
    monitor(event, **info) with events "phase1_step", "phase1_done" and
    "phase2_step"; phase-2 info includes the clipped feature-transfer theta
    gradients and the (frozen) domain models.
    """
    if len(domain_models) < 2:
        raise ConfigurationError("episodic training needs at least 2 source subjects")
    # Phase 1: domain-specific updates
    for dm in domain_models:
        X, y = train_sets[dm.subject_id]
        idx = queues[dm.subject_id].next()
        shared_step_agg(dm, X[idx], y[idx], domain_opts[dm.subject_id])
        if monitor is not None:
            monitor("phase1_step", s=dm.subject_id, batch_idx=idx)
    if monitor is not None:
        monitor("phase1_done", domain_models=domain_models)
    # Phase 2: shared updates over ordered pairs, lexicographic in (s, j)
    losses = []
    for dm_s in domain_models:
        X, y = train_sets[dm_s.subject_id]
        for dm_j in domain_models:
            if dm_j.subject_id == dm_s.subject_id:
                continue
            idx = queues[dm_s.subject_id].next()
            loss, grads, clipped = grad_et(shared, dm_j, X[idx], y[idx], cfg,
                                           random_psi=random_psi)
            _sgd(shared, grads, shared_opt)
            losses.append(loss)
            if monitor is not None:
                monitor("phase2_step", s=dm_s.subject_id, j=dm_j.subject_id,
                        batch_idx=idx, clipped_theta_grads=clipped,
                        domain_models=domain_models, shared=shared)
    return float(np.mean(losses))


@dataclass
class FitResult:
    model: SharedModel
    trace: list[dict]
    domain_models: list[DomainModel] | None
    best_epoch: int
    best_val_rmse: float
    config: TrainConfig
    variant: str


def fit(variant: str, data: list[TrialTable], cfg: TrainConfig,
        rng: np.random.Generator | None = None, monitor=None) -> FitResult:
    """Train one of {agg, fw-agg, et, fwet} with early stopping.

    Per-subject, the earliest val_frac of trials are held out; training stops
    once the pooled validation RMSE has not improved for ``patience`` epochs,
    and the best-epoch parameters are restored.
    """
    variant = variant.lower()
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if not data:
        raise ConfigurationError("no training subjects given")
    episodic = variant in ("et", "fwet")
    fw = variant in ("fw-agg", "fwet")
    if episodic and len(data) < 2:
        raise ConfigurationError("episodic variants need at least 2 source subjects")
    if episodic and "epif" not in cfg.regularizers:
        raise ConfigurationError("episodic training requires the epif regularizer")
    if rng is None:
        rng = substream(cfg.seed, "fit", variant)

    data = sorted(data, key=lambda t: t.subject_id)
    d = data[0].features.shape[1]
    train_sets, val_X, val_y = {}, [], []
    for table in data:
        tr_idx, va_idx = _split_train_val(table, cfg.val_frac)
        train_sets[table.subject_id] = (table.features[tr_idx], table.labels[tr_idx])
        val_X.append(table.features[va_idx])
        val_y.append(table.labels[va_idx])
    val_X = np.concatenate(val_X)
    val_y = np.concatenate(val_y)

    shared = build_model(d, cfg, rng, fw=fw)
    shared_opt = OptState.for_params(shared.params(), cfg.lr, cfg.momentum,
                                     cfg.weight_decay)
    domain_models = None
    domain_opts = queues = None
    random_psi = None
    if episodic:
        domain_models = [build_domain_model(t.subject_id, d, cfg, rng, fw=fw)
                         for t in data]
        domain_opts = {dm.subject_id: OptState.for_params(dm.params(), cfg.lr,
                                                          cfg.momentum,
                                                          cfg.weight_decay)
                       for dm in domain_models}
        queues = {sid: _BatchQueue(len(train_sets[sid][1]), cfg.batch_size, rng)
                  for sid in train_sets}
        if cfg.max_epochs > 0:
            warmup(domain_models, train_sets, domain_opts, cfg, rng)
    else:
        pool_X = np.concatenate([train_sets[t.subject_id][0] for t in data])
        pool_y = np.concatenate([train_sets[t.subject_id][1] for t in data])

    trace: list[dict] = []
    best = shared.copy()
    best_val = np.inf
    best_epoch = 0
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        if episodic:
            if "epir" in cfg.regularizers:
                random_psi = shared.psi.copy()
                numcore.init_uniform(random_psi, rng)
            train_loss = train_epoch_fwet(shared, domain_models, train_sets,
                                          queues, shared_opt, domain_opts, cfg,
                                          random_psi=random_psi, monitor=monitor)
        else:
            order = rng.permutation(len(pool_y))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                losses.append(shared_step_agg(shared, pool_X[idx], pool_y[idx],
                                              shared_opt))
            train_loss = float(np.mean(losses))
        if shared.w is not None:
            w_hat = softmax_weights(shared.w)
            assert np.all(w_hat > 0) and abs(w_hat.sum() - 1.0) < 1e-12
        resid = predict(shared, val_X) - val_y
        val_rmse = float(np.sqrt(np.mean(resid**2))) if len(val_y) else train_loss
        trace.append({"epoch": epoch, "train_loss": train_loss,
                      "val_rmse": val_rmse,
                      "wall_time_s": time.perf_counter() - t0})
        if val_rmse < best_val:
            best_val = val_rmse
            best = shared.copy()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return FitResult(model=best, trace=trace, domain_models=domain_models,
                     best_epoch=best_epoch,
                     best_val_rmse=float(best_val) if np.isfinite(best_val) else np.inf,
                     config=cfg, variant=variant)


def export_channel_weights(model: SharedModel, n_channels: int = 30) -> np.ndarray:
    """softmax(w) regrouped as (channel, band): column 0 theta, column 1 alpha.

    Matches the feature layout of extract_features (all theta channel-major,
    then all alpha); entries sum to 1.
    """
    if model.w is None:
        raise NotApplicableError("model has no feature-weight vector")
    w_hat = softmax_weights(model.w)
    if len(w_hat) != 2 * n_channels:
        raise ShapeError(f"expected {2 * n_channels} weights, got {len(w_hat)}")
    return np.stack([w_hat[:n_channels], w_hat[n_channels:]], axis=1)
