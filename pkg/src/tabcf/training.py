"""Loss assembly and the three-phase training procedure.

Phase 1 pre-trains the hypernetwork with a cluster-guided proximity term so
that each class's weight row doubles as a plausible translation direction.
Phase 2 fits the conditional normalizing flow on the classifier's own
predicted labels, computes median log-density thresholds, and freezes the
flow. Phase 3 optimizes the joint objective — cross-entropy plus, for every
alternative class, counterfactual cross-entropy, a proximity penalty, and a
log-density hinge — with the three weights ramped linearly and composite
early stopping on validation metrics.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import counterfact
from . import gradcore as gc
from .dataio import ClusterIndex, Dataset, Preprocessor, kmeans_per_class
from .flow import (DensityThresholds, Flow, FlowError, density_thresholds,
                   fit_flow)
from .hypernet import HyperNet
from .metrics import proximity_batch


class TrainingError(RuntimeError):
    """Training failure; the message names the phase and step."""


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class TradeoffSchedule:
    """Linear ramp of the three counterfactual loss weights.

    alpha_i(t) = targets_i * min(t / ramp_steps, 1): zero at step 0, the
    target from step ramp_steps on, nonnegative and nondecreasing throughout.
    ``pretrain_alpha`` is the (constant) weight of the phase-1 guidance term.
    """

    targets: tuple[float, float, float] = (0.8, 0.1, 0.1)
    ramp_steps: int = 1
    pretrain_alpha: float = 0.8

    def at(self, step: int) -> np.ndarray:
        frac = 1.0 if self.ramp_steps <= 0 else min(step / self.ramp_steps, 1.0)
        return np.asarray(self.targets, dtype=np.float64) * frac


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 128
    lr: float = 1e-3
    lr_min: float = 1e-5
    pretrain_epochs: int = 40
    flow_epochs: int = 60
    joint_epochs: int = 100
    ramp_epochs: int = 20
    patience: int = 15
    pretrain_alpha: float = 0.8
    alpha_targets: tuple[float, float, float] = (0.8, 0.1, 0.1)
    clusters_per_class: int = 5
    val_fraction: float = 0.15
    # loss-component toggles; all three off reproduces plain cross-entropy
    use_cf_ce: bool = True
    use_proximity: bool = True
    use_plausibility: bool = True
    # density hinge threshold: per-class medians by default, global by flag;
    # the margin adds train-time slack above the threshold so converged
    # densities clear the strict evaluation cut instead of straddling it
    per_class_threshold: bool = True
    plaus_margin: float = 0.0
    # phase-1 candidate x' = W_m instead of x - W_m (literal variant)
    pretrain_literal_candidate: bool = False
    early_stop: bool = True
    accuracy_gate_drop: float = 0.02
    validity_gate: float = 0.95
    # network sizes
    hidden: int = 256
    n_blocks: int = 4
    dropout_rate: float = 0.25
    flow_layers: int = 8
    flow_hidden: int = 16

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_targets"] = list(self.alpha_targets)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        if "alpha_targets" in d:
            d["alpha_targets"] = tuple(d["alpha_targets"])
        return TrainConfig(**d)


# ---------------------------------------------------------------------------
# loss terms

def counterfactual_candidate(net: HyperNet, x: gc.Tensor, w_flat: gc.Tensor,
                             m: int, literal: bool = False) -> gc.Tensor:
    """x' = x - W_m (weight coordinates only; the bias never translates).

    ``literal`` switches to x' = W_m, the variant where the weight row is
    read directly as the counterfactual position rather than a translation.
    """
    trans = net.class_translation(w_flat, m)
    return trans if literal else gc.sub(x, trans)


def plausibility_loss(flow: Flow, xp: gc.Tensor, m: int,
                      delta: float) -> gc.Tensor:
    """Per-row hinge in log-density space: max(delta - log p(x'|m), 0)."""
    onehot = gc.Tensor(flow._onehot(np.full(xp.data.shape[0], m)))
    lp = flow.log_prob_t(xp, onehot)
    return gc.hinge(gc.as_tensor(delta), lp)


def target_class_loss(net: HyperNet, flow: Flow | None, x: gc.Tensor,
               w_flat: gc.Tensor, m: int, alpha, delta: float = 0.0,
               use_cf_ce: bool = True, use_proximity: bool = True,
               use_plausibility: bool = True,
               parts: dict | None = None) -> gc.Tensor:
    """Per-row counterfactual loss toward class ``m``:

    alpha1 * CE(f(x'; H(x')), m) + alpha2 * mean((x'-x)^2) + alpha3 * hinge.

    Gradients reach the hypernetwork twice: through the candidate x' (built
    from H(x)) and through the recomputed weights H(x').
    """
    a1, a2, a3 = (float(a) for a in alpha)
    n, dim = x.data.shape
    xp = counterfactual_candidate(net, x, w_flat, m)
    terms: list[gc.Tensor] = []
    if use_cf_ce and a1 != 0.0:
        # Candidates are scored in inference mode: validity is judged by the
        # deployed classifier (frozen norm stats, no dropout), so the loss
        # must measure that same function or the two drift apart once
        # candidates leave the data distribution.
        wp = net.forward(xp, training=False, update_stats=False)
        zp = net.logits(xp, wp)
        ce = gc.scale(gc.softmax_cross_entropy(zp, np.full(n, m)), a1)
        terms.append(ce)
        if parts is not None:
            parts["cf_ce"] = parts.get("cf_ce", 0.0) + float(ce.data.sum())
    if use_proximity and a2 != 0.0:
        prox = gc.scale(gc.sq_l2(gc.sub(xp, x), axis=1), a2 / dim)
        terms.append(prox)
        if parts is not None:
            parts["prox"] = parts.get("prox", 0.0) + float(prox.data.sum())
    if use_plausibility and a3 != 0.0:
        if flow is None:
            raise TrainingError("plausibility term requires a fitted flow")
        pl = gc.scale(plausibility_loss(flow, xp, m, delta), a3)
        terms.append(pl)
        if parts is not None:
            parts["plaus"] = parts.get("plaus", 0.0) + float(pl.data.sum())
    if not terms:
        return gc.Tensor(np.zeros(n))
    total = terms[0]
    for t in terms[1:]:
        total = gc.add(total, t)
    return total


def composite_loss(net: HyperNet, flow: Flow | None, x: gc.Tensor,
                 y: np.ndarray, alpha, thresholds: DensityThresholds | None,
                 use_cf_ce: bool = True, use_proximity: bool = True,
                 use_plausibility: bool = True, per_class_threshold: bool = True,
                 parts: dict | None = None,
                 plaus_margin: float = 0.0) -> gc.Tensor:
    """Joint objective: mean over the batch of CE(f(x), y) plus the
    counterfactual loss summed over every alternative class m != y.

    With all three toggles off this is exactly plain cross-entropy.
    ``plaus_margin`` raises the density hinge target above the stored
    threshold: the evaluation bar is a strict inequality at the threshold
    itself, and a zero-margin hinge equilibrates exactly on that line, so
    roughly half the counterfactuals land below it. Training with slack keeps
    the converged densities strictly above the reported cut.
    """
    y = np.asarray(y, dtype=np.int64)
    n = x.data.shape[0]
    w = net.forward(x, training=True)
    z = net.logits(x, w)
    ce = gc.softmax_cross_entropy(z, y)
    total = gc.tsum(ce)
    if parts is not None:
        parts["ce"] = parts.get("ce", 0.0) + float(total.data)
    any_term = ((use_cf_ce and alpha[0] != 0.0)
                or (use_proximity and alpha[1] != 0.0)
                or (use_plausibility and alpha[2] != 0.0))
    if any_term:
        for m in range(net.n_classes):
            idx = np.flatnonzero(y != m)
            if idx.size == 0:
                continue
            x_sub = gc.select_rows(x, idx)
            w_sub = gc.select_rows(w, idx)
            if thresholds is None:
                delta = 0.0
            elif per_class_threshold:
                delta = thresholds.for_class(m) + plaus_margin
            else:
                delta = thresholds.global_threshold + plaus_margin
            per_row = target_class_loss(net, flow, x_sub, w_sub, m, alpha, delta,
                                 use_cf_ce, use_proximity, use_plausibility,
                                 parts)
            total = gc.add(total, gc.tsum(per_row))
    return gc.scale(total, 1.0 / n)


def pretrain_loss(net: HyperNet, x: gc.Tensor, y: np.ndarray,
                  clusters: ClusterIndex | None, alpha: float = 0.8,
                  literal: bool = False, parts: dict | None = None) -> gc.Tensor:
    """Phase-1 objective: mean over the batch of CE(f(x), y) plus
    alpha * sum over m != y of the Euclidean distance between the
    counterfactual candidate and the nearest class-m cluster center of x."""
    y = np.asarray(y, dtype=np.int64)
    n = x.data.shape[0]
    w = net.forward(x, training=True)
    z = net.logits(x, w)
    total = gc.tsum(gc.softmax_cross_entropy(z, y))
    if parts is not None:
        parts["ce"] = parts.get("ce", 0.0) + float(total.data)
    if alpha != 0.0 and clusters is not None:
        for m in range(net.n_classes):
            idx = np.flatnonzero(y != m)
            if idx.size == 0:
                continue
            x_sub = gc.select_rows(x, idx)
            w_sub = gc.select_rows(w, idx)
            xp = counterfactual_candidate(net, x_sub, w_sub, m, literal)
            centers = clusters.nearest_batch(x.data[idx], m)
            diff = gc.sub(xp, gc.Tensor(centers))
            # Euclidean norm per row; the epsilon caps the unit-vector
            # gradient at the (measure-zero) coincidence x' = r_m
            dist = gc.sqrt(gc.add(gc.sq_l2(diff, axis=1),
                                  gc.as_tensor(1e-24)))
            guide = gc.scale(gc.tsum(dist), alpha)
            total = gc.add(total, guide)
            if parts is not None:
                parts["guide"] = parts.get("guide", 0.0) + float(guide.data)
    return gc.scale(total, 1.0 / n)


# ---------------------------------------------------------------------------
# validation metrics and early stopping

@dataclass
class ValMetrics:
    accuracy: float
    validity: float
    plausible: float
    mean_l2: float


@dataclass
class EarlyStopState:
    best_score: float = float("-inf")
    best_state: dict | None = None
    best_epoch: int | None = None
    since_improvement: int = 0
    metrics: ValMetrics | None = None


def validation_metrics(net: HyperNet, flow: Flow, prep: Preprocessor,
                       thresholds: DensityThresholds, X: np.ndarray,
                       y: np.ndarray) -> ValMetrics:
    """Accuracy plus counterfactual validity / plausibility / mean L2 over
    every alternative class of every validation row. Distances are measured
    on the train min-max scale (see Preprocessor.to_unit_range)."""
    pred, _, cand = counterfact.generate_arrays(net, prep, X)
    cf_pred, log_dens = counterfact.annotate_arrays(net, flow, cand)
    acc = float((pred == y).mean())
    K = net.n_classes
    alt = pred[:, None] != np.arange(K)[None, :]
    rows, targets = np.nonzero(alt)
    validity = float((cf_pred[rows, targets] == targets).mean())
    plausible = float((log_dens[rows, targets]
                       > thresholds.global_threshold).mean())
    _, l2, _ = proximity_batch(prep.to_unit_range(X[rows]),
                               prep.to_unit_range(cand[rows, targets]),
                               prep.groups)
    return ValMetrics(acc, validity, plausible, float(l2.mean()))


def early_stop_score(m: ValMetrics, pretrain_accuracy: float,
                     accuracy_gate_drop: float = 0.02,
                     validity_gate: float = 0.95) -> float:
    """Composite selection score: -inf unless accuracy stays within
    ``accuracy_gate_drop`` of the pre-training accuracy AND validity clears
    ``validity_gate``; otherwise plausible-fraction - 0.1 * mean L2."""
    if m.accuracy < pretrain_accuracy - accuracy_gate_drop:
        return float("-inf")
    if m.validity < validity_gate:
        return float("-inf")
    return m.plausible - 0.1 * m.mean_l2


# ---------------------------------------------------------------------------
# state snapshots

def snapshot_state(module) -> dict[str, np.ndarray]:
    return {name: arr.copy() for name, arr in module.state_arrays()}


def state_hash(module) -> str:
    h = hashlib.sha256()
    for name, arr in module.state_arrays():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()


def log_hash(lines: list[str]) -> str:
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


# ---------------------------------------------------------------------------
# the trained artifact

@dataclass
class ModelBundle:
    schema: object
    prep: Preprocessor
    net: HyperNet
    flow: Flow
    thresholds: DensityThresholds
    config: TrainConfig
    pretrain_accuracy: float
    clusters: ClusterIndex | None = None
    log: list[str] = field(default_factory=list)
    best_epoch: int | None = None
    val_metrics: ValMetrics | None = None


# ---------------------------------------------------------------------------
# training driver

def _stratified_indices(y: np.ndarray, fraction: float,
                        rng: np.random.Generator
                        ) -> tuple[np.ndarray, np.ndarray]:
    main, held = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if idx.size < 2:
            raise TrainingError(f"class {c} has {idx.size} samples; "
                                "need >= 2 for a validation split")
        perm = rng.permutation(idx)
        n_held = min(max(int(round(idx.size * fraction)), 1), idx.size - 1)
        held.append(perm[:n_held])
        main.append(perm[n_held:])
    return np.sort(np.concatenate(main)), np.sort(np.concatenate(held))


def train(config: TrainConfig, dataset: Dataset,
          prep: Preprocessor, log_path=None) -> ModelBundle:
    """Run all three phases and return the best model snapshot.

    Phase 1: cluster-guided pre-training of the hypernetwork.
    Phase 2: flow fit on the classifier's predicted labels, thresholds,
    freeze (verified bit-identical at the end by hashing).
    Phase 3: joint objective with ramped weights and composite early
    stopping; the best-scoring snapshot wins, the final parameters are kept
    if the gates never pass.
    """
    if not 0.0 < config.val_fraction < 0.5:
        raise TrainingError(f"validation fraction {config.val_fraction} "
                            "outside (0, 0.5)")
    X_all, y_all = dataset.X, dataset.y
    K = dataset.schema.n_classes
    dim = X_all.shape[1]

    lines: list[str] = []
    handle = open(log_path, "a", encoding="utf-8") if log_path else None

    def record(payload: dict) -> None:
        line = json.dumps(payload, sort_keys=True)
        lines.append(line)
        if handle is not None:
            handle.write(line + "\n")
            handle.flush()

    try:
        split_rng = np.random.default_rng([config.seed, 101])
        tr_idx, val_idx = _stratified_indices(y_all, config.val_fraction,
                                              split_rng)
        X_tr, y_tr = X_all[tr_idx], y_all[tr_idx]
        X_val, y_val = X_all[val_idx], y_all[val_idx]
        n = X_tr.shape[0]
        steps_per_epoch = max(1, math.ceil(n / config.batch_size))

        net = HyperNet(dim, K, seed=config.seed, hidden=config.hidden,
                       n_blocks=config.n_blocks,
                       dropout_rate=config.dropout_rate)

        clusters = None
        if config.pretrain_alpha != 0.0:
            counts = np.bincount(y_tr, minlength=K)
            k = int(min(config.clusters_per_class, counts[counts > 0].min()))
            clusters = kmeans_per_class(X_tr, y_tr, k=k, seed=config.seed)

        # ------------------------------------------------------ phase 1
        params = net.parameters()
        adam = gc.AdamState(params)
        total_steps = config.pretrain_epochs * steps_per_epoch
        batch_rng = np.random.default_rng([config.seed, 1])
        step = 0
        for epoch in range(config.pretrain_epochs):
            order = batch_rng.permutation(n)
            parts: dict = {}
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                x_t = gc.Tensor(X_tr[idx])
                try:
                    with gc.Tape() as tape:
                        loss = pretrain_loss(net, x_t, y_tr[idx], clusters,
                                             config.pretrain_alpha,
                                             config.pretrain_literal_candidate,
                                             parts)
                    if not np.isfinite(loss.data):
                        raise gc.GradError("non-finite loss")
                    grads = gc.differentiate(tape, loss, params)
                    gc.adam_step(params, grads, adam,
                                 gc.cosine_lr(step, total_steps,
                                              config.lr, config.lr_min))
                except gc.GradError as e:
                    raise TrainingError(
                        f"phase 1 (pretrain) diverged at step {step}: {e}"
                    ) from e
                step += 1
            acc = float((net.predict(X_val) == y_val).mean())
            record({"phase": "pretrain", "epoch": epoch,
                    "ce": round(parts.get("ce", 0.0) / n, 6),
                    "guide": round(parts.get("guide", 0.0) / n, 6),
                    "val_accuracy": round(acc, 6)})
        pretrain_accuracy = float((net.predict(X_val) == y_val).mean())

        # ------------------------------------------------------ phase 2
        flow = Flow(dim, K, seed=config.seed, n_layers=config.flow_layers,
                    hidden=config.flow_hidden)
        y_pred = net.predict(X_tr)
        noise_rng = np.random.default_rng([config.seed, 2])
        X_flow = prep.add_onehot_noise(X_tr, noise_rng)
        try:
            fit_flow(flow, X_flow, y_pred, epochs=config.flow_epochs,
                     batch_size=config.batch_size, lr=config.lr,
                     seed=config.seed, lr_min=config.lr_min, log=record)
        except FlowError as e:
            raise TrainingError(f"phase 2 (flow) diverged: {e}") from e
        thresholds = density_thresholds(flow, X_tr, y_pred)
        for p in flow.parameters():
            p.requires_grad = False
        flow_hash = state_hash(flow)
        record({"phase": "thresholds",
                "global": round(thresholds.global_threshold, 6),
                "per_class": [round(v, 6) for v in thresholds.per_class]})

        # ------------------------------------------------------ phase 3
        schedule = TradeoffSchedule(
            targets=config.alpha_targets,
            ramp_steps=config.ramp_epochs * steps_per_epoch,
            pretrain_alpha=config.pretrain_alpha)
        adam = gc.AdamState(params)
        total_steps = config.joint_epochs * steps_per_epoch
        batch_rng = np.random.default_rng([config.seed, 3])
        stop = EarlyStopState()
        step = 0
        alpha = schedule.at(0)
        for epoch in range(config.joint_epochs):
            order = batch_rng.permutation(n)
            parts = {}
            lr_now = config.lr
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                x_t = gc.Tensor(X_tr[idx])
                alpha = schedule.at(step)
                lr_now = gc.cosine_lr(step, total_steps,
                                      config.lr, config.lr_min)
                try:
                    with gc.Tape() as tape:
                        loss = composite_loss(
                            net, flow, x_t, y_tr[idx], alpha, thresholds,
                            config.use_cf_ce, config.use_proximity,
                            config.use_plausibility,
                            config.per_class_threshold, parts,
                            plaus_margin=config.plaus_margin)
                    if not np.isfinite(loss.data):
                        raise gc.GradError("non-finite loss")
                    grads = gc.differentiate(tape, loss, params)
                    gc.adam_step(params, grads, adam, lr_now)
                except gc.GradError as e:
                    raise TrainingError(
                        f"phase 3 (joint) diverged at step {step}: {e}"
                    ) from e
                step += 1
            vm = validation_metrics(net, flow, prep, thresholds, X_val, y_val)
            score = early_stop_score(vm, pretrain_accuracy,
                                     config.accuracy_gate_drop,
                                     config.validity_gate)
            record({"phase": "joint", "epoch": epoch,
                    "ce": round(parts.get("ce", 0.0) / n, 6),
                    "cf_ce": round(parts.get("cf_ce", 0.0) / n, 6),
                    "prox": round(parts.get("prox", 0.0) / n, 6),
                    "plaus": round(parts.get("plaus", 0.0) / n, 6),
                    "lr": round(lr_now, 8),
                    "alpha": [round(a, 6) for a in alpha],
                    "val_accuracy": round(vm.accuracy, 6),
                    "validity": round(vm.validity, 6),
                    "p_plaus": round(vm.plausible, 6),
                    "mean_l2": round(vm.mean_l2, 6),
                    "score": (round(score, 6)
                              if np.isfinite(score) else "-inf")})
            stop.metrics = vm
            if config.early_stop:
                if score > stop.best_score:
                    stop.best_score = score
                    stop.best_state = snapshot_state(net)
                    stop.best_epoch = epoch
                    stop.since_improvement = 0
                else:
                    stop.since_improvement += 1
                    if stop.since_improvement >= config.patience:
                        record({"phase": "joint", "early_stop": epoch})
                        break

        if stop.best_state is not None:
            net.load_state_arrays(stop.best_state)
            stop.metrics = validation_metrics(net, flow, prep, thresholds,
                                              X_val, y_val)
        if state_hash(flow) != flow_hash:
            raise TrainingError("phase 3 (joint) modified the frozen flow")
        if stop.metrics is not None:
            record({"phase": "final", "best_epoch": stop.best_epoch,
                    "val_accuracy": round(stop.metrics.accuracy, 6),
                    "validity": round(stop.metrics.validity, 6),
                    "p_plaus": round(stop.metrics.plausible, 6),
                    "mean_l2": round(stop.metrics.mean_l2, 6)})

        return ModelBundle(schema=dataset.schema, prep=prep, net=net,
                           flow=flow, thresholds=thresholds, config=config,
                           pretrain_accuracy=pretrain_accuracy,
                           clusters=clusters, log=lines,
                           best_epoch=stop.best_epoch,
                           val_metrics=stop.metrics)
    finally:
        if handle is not None:
            handle.close()
