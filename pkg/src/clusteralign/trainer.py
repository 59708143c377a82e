"""The full training loop: schedules, loss composition, adversarial updates.

Every step runs, in order: student train-mode forwards on both domains, a
teacher read (and temporal update), pseudo labeling, the four losses, one
shared gradient composition, and simultaneous momentum-SGD updates of the
student and the critic. The critic ascends the domain discrepancy while
the student descends it; the student picks that term up through the
gradient-reversal connector on the feature path. During the pretraining
phase the clustering, alignment, and adversarial weights are exactly zero
for the student (the critic itself keeps learning, so its divergence
estimate is meaningful by the time adaptation starts).

A whole run is a pure function of (config, dataset): every random draw is
seeded from the config seed and the iteration counter.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from clusteralign.data import BatchPair, DomainDataset, iterate_batches
from clusteralign.evaluate import RunMetrics, snapshot
from clusteralign.losses import (
    LossBundle,
    PseudoLabeledBatch,
    alignment_loss,
    clustering_loss,
    cross_entropy,
    domain_adversarial_loss,
)
from clusteralign.network import (
    Network,
    NetworkSpec,
    OptimizerState,
    backward,
    forward,
    init_network,
    init_optimizer,
    reverse_gradient,
    sgd_step,
)
from clusteralign.seeding import derive_seed
from clusteralign.teacher import (
    TeacherState,
    corrected_probabilities,
    init_teacher,
    pi_predict,
    pseudo_labels,
    temporal_update,
)

ALPHA_SCHEDULES = ("logistic", "exp_ramp", "constant")
LAMBDA_SCHEDULES = ("same_as_alpha", "constant")
TEACHER_MODES = ("pi", "temporal")


class TrainingAbort(RuntimeError):
    """A loss or parameter went non-finite; carries a diagnostic snapshot."""

    def __init__(self, message, details):
        super().__init__(message)
        self.details = details


def alpha_logistic(t: float) -> float:
    """Ramp 2/(1+exp(-10t)) - 1 on t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return 2.0 / (1.0 + math.exp(-10.0 * t)) - 1.0


def alpha_exp_ramp(ite: int, start: int, length: int) -> float:
    """Exponential ramp exp(-10*(1 - min((ite-start)/length, 1))) once ite
    reaches start; zero before."""
    if length <= 0:
        raise ValueError("length must be positive")
    if ite < start:
        return 0.0
    return math.exp(-10.0 * (1.0 - min((ite - start) / length, 1.0)))


def lr_schedule(progress: float, base: float) -> float:
    """Annealed learning rate base / (1 + 10*progress)^0.75."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError("progress must lie in [0, 1]")
    return base / (1.0 + 10.0 * progress) ** 0.75


@dataclass(frozen=True)
class TrainConfig:
    """All knobs of one training run.

    The schedule weights alpha (clustering + alignment) and lam
    (adversarial) are exactly zero while iteration < pretrain_iters. The
    use_* switches and self_teacher exist for ablations.
    """

    total_iters: int = 5000
    pretrain_iters: int = 500
    batch_source: int = 64
    batch_target: int = 64
    margin: float = 3.0
    threshold: float = 0.9
    alpha_schedule: str = "logistic"
    alpha_max: float = 1.0
    lambda_schedule: str = "same_as_alpha"
    lambda_max: float = 1.0
    ramp_length: int = 0
    lr_base: float = 0.01
    momentum: float = 0.9
    teacher_mode: str = "temporal"
    decay: float = 0.6
    seed: int = 0
    critic_hidden: int = 16
    hidden_layers: tuple = (16, 16)
    activation: str = "relu"
    dropout_rate: float = 0.1
    feature_tap: str = ""
    metric: str = "sq_euclidean"
    use_clustering: bool = True
    use_alignment: bool = True
    self_teacher: bool = False

    def __post_init__(self):
        if self.pretrain_iters < 0 or self.total_iters <= self.pretrain_iters:
            raise ValueError("need 0 <= pretrain_iters < total_iters")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.batch_source < 1 or self.batch_target < 1:
            raise ValueError("batch sizes must be at least 1")
        if self.alpha_schedule not in ALPHA_SCHEDULES:
            raise ValueError(f"unknown alpha_schedule {self.alpha_schedule!r}")
        if self.lambda_schedule not in LAMBDA_SCHEDULES:
            raise ValueError(f"unknown lambda_schedule {self.lambda_schedule!r}")
        if self.teacher_mode not in TEACHER_MODES:
            raise ValueError(f"unknown teacher_mode {self.teacher_mode!r}")
        if self.alpha_max < 0 or self.lambda_max < 0:
            raise ValueError("schedule maxima must be nonnegative")
        object.__setattr__(self, "hidden_layers", tuple(self.hidden_layers))


@dataclass
class TrainState:
    student: Network
    critic: Network
    student_opt: OptimizerState
    critic_opt: OptimizerState
    teacher: TeacherState
    iteration: int = 0
    metrics: list = field(default_factory=list)


def resolve_feature_tap(cfg: TrainConfig, num_classes: int) -> str:
    if cfg.feature_tap:
        return cfg.feature_tap
    return "logits" if num_classes == 2 else "penultimate"


def init_train_state(cfg: TrainConfig, ds: DomainDataset) -> TrainState:
    tap = resolve_feature_tap(cfg, ds.num_classes)
    student_spec = NetworkSpec(
        layer_sizes=(ds.source_x.shape[1], *cfg.hidden_layers, ds.num_classes),
        activation=cfg.activation,
        dropout_rate=cfg.dropout_rate,
        feature_tap=tap,
    )
    critic_spec = NetworkSpec(
        layer_sizes=(student_spec.feature_dim, cfg.critic_hidden, cfg.critic_hidden, 1),
        activation="relu",
        dropout_rate=0.0,
        feature_tap="penultimate",
        head="sigmoid",
    )
    student = init_network(student_spec, derive_seed(cfg.seed, 11))
    critic = init_network(critic_spec, derive_seed(cfg.seed, 13))
    teacher = init_teacher(
        cfg.teacher_mode, ds.target_x.shape[0], ds.num_classes, cfg.decay
    )
    return TrainState(
        student=student,
        critic=critic,
        student_opt=init_optimizer(student, cfg.momentum, cfg.lr_base),
        critic_opt=init_optimizer(critic, cfg.momentum, cfg.lr_base),
        teacher=teacher,
    )


def schedule_weights(cfg: TrainConfig, iteration: int):
    """The (alpha, lam) pair applied at a given iteration."""
    if iteration < cfg.pretrain_iters:
        return 0.0, 0.0
    span = max(1, cfg.total_iters - cfg.pretrain_iters)
    if cfg.alpha_schedule == "logistic":
        t = min(1.0, (iteration - cfg.pretrain_iters) / span)
        shape = alpha_logistic(t)
    elif cfg.alpha_schedule == "exp_ramp":
        length = cfg.ramp_length if cfg.ramp_length > 0 else span
        shape = alpha_exp_ramp(iteration, cfg.pretrain_iters, length)
    else:
        shape = 1.0
    alpha = cfg.alpha_max * shape
    if cfg.lambda_schedule == "same_as_alpha":
        lam = cfg.lambda_max * shape
    else:
        lam = cfg.lambda_max
    return alpha, lam


def _teacher_batch_view(state: TrainState, cfg: TrainConfig, batch: BatchPair,
                        student_target_probs, noise_seed):
    """Teacher probabilities for the target batch, read before any update."""
    if cfg.self_teacher:
        return student_target_probs
    if cfg.teacher_mode == "pi":
        return pi_predict(state.student, batch.target_x, noise_seed)
    return corrected_probabilities(state.teacher)[batch.target_indices]


def train_step(state: TrainState, batch: BatchPair, cfg: TrainConfig):
    """One optimization step; returns the advanced state and its losses."""
    it = state.iteration
    for net, name in ((state.student, "student"), (state.critic, "critic")):
        if not all(np.all(np.isfinite(w)) for w in net.weights + net.biases):
            raise TrainingAbort(
                f"non-finite {name} parameters entering iteration {it}",
                {"iteration": it, "parameter_set": name},
            )
    alpha, lam = schedule_weights(cfg, it)
    lr = lr_schedule(it / cfg.total_iters, cfg.lr_base)

    trace_src = forward(state.student, batch.source_x, "train", derive_seed(cfg.seed, it, 1))
    trace_tgt = forward(state.student, batch.target_x, "train", derive_seed(cfg.seed, it, 2))

    teacher_probs = _teacher_batch_view(
        state, cfg, batch, trace_tgt.probabilities, derive_seed(cfg.seed, it, 3)
    )
    new_teacher = state.teacher
    if cfg.teacher_mode == "temporal" and not cfg.self_teacher:
        new_teacher = temporal_update(
            state.teacher, batch.target_indices, trace_tgt.probabilities
        )
    tgt_labels, tgt_conf = pseudo_labels(teacher_probs)

    l_y, d_logits = cross_entropy(trace_src.probabilities, batch.source_y)

    num_classes = state.student.spec.output_dim
    src_batch = PseudoLabeledBatch(
        trace_src.features, batch.source_y, np.ones(len(batch.source_y)), num_classes
    )
    tgt_batch = PseudoLabeledBatch(trace_tgt.features, tgt_labels, tgt_conf, num_classes)

    l_c_src, g_c_src = clustering_loss(src_batch, cfg.margin, cfg.metric)
    l_c_tgt, g_c_tgt = clustering_loss(tgt_batch, cfg.margin, cfg.metric)
    l_c = l_c_src + l_c_tgt
    l_a, g_a_src, g_a_tgt = alignment_loss(src_batch, tgt_batch)

    critic_src = forward(state.critic, trace_src.features, "train", derive_seed(cfg.seed, it, 4))
    critic_tgt = forward(state.critic, trace_tgt.features, "train", derive_seed(cfg.seed, it, 5))
    l_d, d_out_src, d_out_tgt, selected = domain_adversarial_loss(
        critic_src.probabilities[:, 0], critic_tgt.probabilities[:, 0],
        tgt_conf, cfg.threshold,
    )

    # The critic descends the negated discrepancy (so it maximizes l_d);
    # the reversal connector then hands the student +lam * d(l_d)/d(features).
    crit_gs_src = backward(state.critic, critic_src, -d_out_src[:, None], "probabilities")
    crit_gs_tgt = backward(state.critic, critic_tgt, -d_out_tgt[:, None], "probabilities")
    critic_grads = crit_gs_src + crit_gs_tgt
    adv_src = reverse_gradient(crit_gs_src.d_input, lam)
    adv_tgt = reverse_gradient(crit_gs_tgt.d_input, lam)

    d_feat_src = adv_src.copy()
    d_feat_tgt = adv_tgt.copy()
    if cfg.use_clustering:
        d_feat_src += alpha * g_c_src
        d_feat_tgt += alpha * g_c_tgt
    if cfg.use_alignment:
        d_feat_src += alpha * g_a_src
        d_feat_tgt += alpha * g_a_tgt

    student_grads = backward(state.student, trace_src, d_logits, "logits")
    if np.any(d_feat_src):
        student_grads = student_grads + backward(state.student, trace_src, d_feat_src, "features")
    if np.any(d_feat_tgt):
        student_grads = student_grads + backward(state.student, trace_tgt, d_feat_tgt, "features")

    new_student, new_student_opt = sgd_step(state.student, state.student_opt, student_grads, lr)
    new_critic, new_critic_opt = sgd_step(state.critic, state.critic_opt, critic_grads, lr)

    bundle = LossBundle(
        l_y=l_y, l_c=l_c, l_a=l_a, l_d=l_d,
        d_logits_source=d_logits,
        d_features_source=d_feat_src,
        d_features_target=d_feat_tgt,
        critic_grads=critic_grads,
        selection_count=selected,
    )
    _check_finite(bundle, new_student, new_critic, it)

    new_state = TrainState(
        student=new_student,
        critic=new_critic,
        student_opt=new_student_opt,
        critic_opt=new_critic_opt,
        teacher=new_teacher,
        iteration=it + 1,
        metrics=state.metrics,
    )
    return new_state, bundle


def _check_finite(bundle, student, critic, iteration):
    values = (bundle.l_y, bundle.l_c, bundle.l_a, bundle.l_d)
    finite = all(math.isfinite(v) for v in values)
    finite = finite and all(np.all(np.isfinite(w)) for w in student.weights + student.biases)
    finite = finite and all(np.all(np.isfinite(w)) for w in critic.weights + critic.biases)
    if not finite:
        raise TrainingAbort(
            f"non-finite loss or parameter at iteration {iteration}",
            {
                "iteration": iteration,
                "l_y": bundle.l_y,
                "l_c": bundle.l_c,
                "l_a": bundle.l_a,
                "l_d": bundle.l_d,
                "selection_count": bundle.selection_count,
            },
        )


def _snapshot(state: TrainState, cfg: TrainConfig, ds: DomainDataset) -> RunMetrics:
    return snapshot(
        iteration=state.iteration,
        student=state.student,
        critic=state.critic,
        teacher=state.teacher,
        ds=ds,
        threshold=cfg.threshold,
        margin=cfg.margin,
        metric=cfg.metric,
        self_teacher=cfg.self_teacher,
        seed=cfg.seed,
    )


def run_training(cfg: TrainConfig, ds: DomainDataset, eval_every: int):
    """Train to completion; returns (final state, metrics log).

    The log holds one entry for iteration 0 and one after every
    eval_every-th step.
    """
    if eval_every < 1:
        raise ValueError("eval_every must be at least 1")
    state = init_train_state(cfg, ds)
    state.metrics.append(_snapshot(state, cfg, ds))
    batch_seed = derive_seed(cfg.seed, 17)
    epoch = 0
    while state.iteration < cfg.total_iters:
        for pair in iterate_batches(ds, cfg.batch_source, cfg.batch_target, batch_seed, epoch):
            if state.iteration >= cfg.total_iters:
                break
            state, _ = train_step(state, pair, cfg)
            if state.iteration % eval_every == 0:
                state.metrics.append(_snapshot(state, cfg, ds))
        epoch += 1
    return state, list(state.metrics)


def train(cfg: TrainConfig, ds: DomainDataset, eval_every: int):
    """Run the full schedule and return the metrics log."""
    _, metrics = run_training(cfg, ds, eval_every)
    return metrics
