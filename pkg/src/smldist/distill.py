"""Stage, memory and logits distillation.

The student is built in three passes: its stage prefixes are regressed onto
the teacher's stage features (time plus frequency domain), the teacher's
classifier heads are copied over, and the whole network is fine-tuned on a
conditional soft-target loss before the most important head is kept.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import core
from .core import NumericError, ShapeError, Tensor
from .data import WindowSet
from .metrics import evaluate_logits
from .nn import HeadEnsemble, Network
from .optim import Adam

logger = logging.getLogger(__name__)


class PairingError(ShapeError):
    pass


@dataclass
class TrainConfig:
    """Supervised training of a teacher (or any network) on hard labels."""

    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 256
    seed: int = 0


@dataclass
class DistillConfig:
    lam: float = 1.0
    tau: float = 4.0
    gamma: float = 1.0
    stage_epochs: list[int] | int = 3
    ft_epochs: int = 5
    lr: float = 1e-4
    ft_lr: float | None = None  # fine-tune learning rate; None reuses lr
    batch_size: int = 256
    enable_stage: bool = True
    enable_memory: bool = True
    enable_logits: bool = True
    logits_loss: str = "conditional"  # or "hinton" for vanilla KD
    early_stop: bool = False
    seed: int = 0

    def validate(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.ft_epochs < 0:
            raise ValueError("ft_epochs must be non-negative")
        if self.lr <= 0 or (self.ft_lr is not None and self.ft_lr <= 0):
            raise ValueError("learning rates must be positive")
        if self.logits_loss not in ("conditional", "hinton"):
            raise ValueError(f"unknown logits_loss {self.logits_loss!r}")

    def epochs_for_stage(self, i: int, n_stages: int) -> int:
        if isinstance(self.stage_epochs, int):
            return self.stage_epochs
        if len(self.stage_epochs) != n_stages:
            raise ValueError(f"stage_epochs has {len(self.stage_epochs)} entries for {n_stages} stages")
        return int(self.stage_epochs[i])

    def total_epochs(self, n_stages: int) -> int:
        stage = sum(self.epochs_for_stage(i, n_stages) for i in range(n_stages)) if self.enable_stage else 0
        return stage + self.ft_epochs

    @property
    def flags(self) -> dict[str, bool]:
        return {"stage": self.enable_stage, "memory": self.enable_memory, "logits": self.enable_logits}

    def ablated(self, letters) -> "DistillConfig":
        """Copy with the named parts ('s', 'm', 'l') switched off."""
        letters = set(letters)
        unknown = letters - {"s", "m", "l"}
        if unknown:
            raise ValueError(f"unknown ablation letters {sorted(unknown)}")
        return replace(
            self,
            enable_stage=self.enable_stage and "s" not in letters,
            enable_memory=self.enable_memory and "m" not in letters,
            enable_logits=self.enable_logits and "l" not in letters,
        )


def run_mode(cfg: DistillConfig) -> str:
    flags = cfg.flags
    if not any(flags.values()):
        return "raw-student-equivalent fine-tune"
    if all(flags.values()):
        return "SMLDist"
    off = ", ".join(k[0].upper() for k, v in flags.items() if not v)
    return f"SMLDist w/o {off}"


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    stage_losses: list[list[float]] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    q_hat: list[list[float]] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = float("nan")
    ft_epochs: int = 0
    mode: str = ""
    flags: dict[str, bool] = field(default_factory=dict)
    selected_head: int | None = None

    @property
    def stage_final_loss(self) -> list[float]:
        return [curve[-1] if curve else float("nan") for curve in self.stage_losses]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_final_loss"] = self.stage_final_loss
        return d


# ---------------------------------------------------------------------------
# losses


def stage_loss(teacher_feats, student_feats: Tensor) -> Tensor:
    """Periodic plus tendency feature distance, averaged over the batch.

    Per window: ``(|rfft(T) - rfft(S)|_F + |T - S|_F) / (C * L)`` with the FFT
    along time. Accepts (B, C, L) or a single (C, L) window.
    """
    T = teacher_feats if isinstance(teacher_feats, Tensor) else Tensor(np.asarray(teacher_feats, dtype=student_feats.dtype))
    S = student_feats
    if T.shape != S.shape:
        raise ShapeError(f"stage_loss: teacher {T.shape} vs student {S.shape}")
    if S.ndim == 2:
        T, S = core.reshape(T, (1,) + T.shape), core.reshape(S, (1,) + S.shape)
    if S.ndim != 3:
        raise ShapeError(f"stage_loss expects (B, C, L) features, got {S.shape}")
    C, L = S.shape[1], S.shape[2]
    periodic = core.frobenius_norm(core.rfft(T) - core.rfft(S), axis=(1, 2, 3))
    tendency = core.frobenius_norm(T - S, axis=(1, 2))
    return core.mean(periodic + tendency) * (1.0 / (C * L))


def _onehot(hard_label, n_classes: int, dtype=np.float64) -> np.ndarray:
    hard = np.asarray(hard_label)
    if hard.ndim == 2:
        return hard.astype(dtype, copy=False)
    return core.one_hot(hard, n_classes, dtype)


def conditional_target(teacher_logits, hard_label, gamma: float) -> np.ndarray:
    """Teacher distribution with the true class forced to ``gamma`` where the teacher is wrong, re-softmaxed."""
    z = np.asarray(teacher_logits, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    y = _onehot(hard_label, z.shape[1])
    if y.shape != z.shape:
        raise ShapeError(f"conditional_target: logits {z.shape} vs labels {y.shape}")
    r = core._softmax_np(z, 1)
    truth = np.argmax(y, axis=1)
    wrong = np.argmax(z, axis=1) != truth
    r[np.flatnonzero(wrong), truth[wrong]] = gamma
    return core._softmax_np(r, 1)


def hinton_loss(student_logits: Tensor, teacher_logits, hard_label, lam: float, tau: float) -> Tensor:
    n_classes = student_logits.shape[1]
    loss = core.soft_cross_entropy(student_logits, _onehot(hard_label, n_classes, student_logits.dtype))
    if lam == 0:
        return loss
    soft = core._softmax_np(np.asarray(teacher_logits, dtype=np.float64) / tau, 1)
    return loss + core.soft_cross_entropy(student_logits * (1.0 / tau), soft) * lam


def logits_loss_LD(student_logits: Tensor, teacher_logits, hard_label, lam: float, tau: float, gamma: float) -> Tensor:
    n_classes = student_logits.shape[1]
    y = _onehot(hard_label, n_classes)
    loss = core.soft_cross_entropy(student_logits, y.astype(student_logits.dtype))
    if lam == 0:
        return loss
    q = conditional_target(np.asarray(teacher_logits, dtype=np.float64) / tau, y, gamma)
    return loss + core.soft_cross_entropy(student_logits * (1.0 / tau), q) * lam


# ---------------------------------------------------------------------------
# structure checks and head surgery


def check_pairing(teacher: Network, student: Network):
    t_shapes = teacher.backbone.stage_shapes()
    s_shapes = student.backbone.stage_shapes()
    if (teacher.in_channels, teacher.input_length) != (student.in_channels, student.input_length):
        raise PairingError("teacher and student take different input shapes")
    if len(t_shapes) != len(s_shapes):
        raise PairingError(f"teacher has {len(t_shapes)} stages, student {len(s_shapes)}")
    for i, (t, s) in enumerate(zip(t_shapes, s_shapes)):
        if t != s:
            raise PairingError(f"stage {i}: teacher boundary {t} != student boundary {s}")


def clone_memory(teacher_heads: HeadEnsemble, student_heads: HeadEnsemble):
    """Copy every head parameter and the importance weights from teacher to student."""
    if len(teacher_heads.heads) != len(student_heads.heads):
        raise PairingError(
            f"teacher has {len(teacher_heads.heads)} heads, student {len(student_heads.heads)}"
        )
    for i, (th, sh) in enumerate(zip(teacher_heads.heads, student_heads.heads)):
        if th.signature() != sh.signature():
            raise PairingError(f"head {i}: teacher {th.signature()} != student {sh.signature()}")
    for i, (th, sh) in enumerate(zip(teacher_heads.heads, student_heads.heads)):
        sh.load_state_dict(th.state_dict())
        if hasattr(th, "beta"):
            sh.beta = th.beta
    student_heads.weights.data = teacher_heads.weights.data.copy()


def auto_search_select(net: Network) -> Network:
    """Keep only the head with the largest importance (ties -> lowest index)."""
    ens = net.ensemble
    if ens is None:
        return net
    best = ens.best_head()
    cfg = replace(net.config, heads=[net.config.heads[best]], ensemble=False)
    return Network(net.backbone, ens.heads[best], cfg, net.n_classes)


# ---------------------------------------------------------------------------
# training loops


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def _dtype_of(net: Network):
    return net.backbone.stages[0].blocks[0].weight.dtype


def _check_finite(loss: Tensor, where: str):
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite loss during {where}")


def _record_eval(net: Network, val: WindowSet | None, report: TrainReport) -> float:
    ens = net.ensemble
    if ens is not None:
        report.q_hat.append(ens.importance().tolist())
    if val is None or len(val) == 0:
        return float("nan")
    scores = evaluate_logits(net.predict(val.X), val.y, net.n_classes)
    report.val_accuracy.append(scores["accuracy"])
    report.val_f1.append(scores["f1_macro"])
    return scores["accuracy"]


def train_teacher(net: Network, train: WindowSet, val: WindowSet | None, cfg: TrainConfig) -> tuple[Network, TrainReport]:
    """Hard-label training of backbone, heads and importance weights; keeps the best-val weights."""
    rng = np.random.default_rng(cfg.seed)
    X = train.X.astype(_dtype_of(net))
    params = net.parameters()
    opt = Adam(params, lr=cfg.lr)
    report = TrainReport()
    best_state, best_acc = net.state_dict(), -1.0
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(len(X), cfg.batch_size, rng):
            opt.zero_grad()
            loss = core.cross_entropy(net(Tensor(X[idx])), train.y[idx])
            _check_finite(loss, "teacher training")
            core.backward(loss)
            opt.step()
            losses.append(loss.item() * len(idx))
        report.epoch_loss.append(float(np.sum(losses) / len(X)))
        acc = _record_eval(net, val, report)
        if val is None or acc >= best_acc:
            best_acc, best_state, report.best_epoch = acc, net.state_dict(), epoch
        logger.info("teacher epoch %d loss %.4f val_acc %.4f", epoch, report.epoch_loss[-1], acc)
    net.load_state_dict(best_state)
    report.best_val_accuracy = float(best_acc)
    return net, report


def _stage_params(net: Network, n_stages: int) -> dict[str, Tensor]:
    prefixes = tuple(f"backbone.stages.{j}." for j in range(n_stages))
    return {k: v for k, v in net.named_parameters() if k.startswith(prefixes)}


def stage_distill(teacher: Network, student: Network, X: np.ndarray, cfg: DistillConfig, report: TrainReport | None = None) -> Network:
    """Regress student stage prefixes onto the frozen teacher's, stage by stage.

    Only inputs are consumed; labels never reach this loop. A fresh Adam
    optimises every parameter of the student prefix ``f_1..f_i`` in stage i.
    """
    check_pairing(teacher, student)
    report = report if report is not None else TrainReport()
    rng = np.random.default_rng(cfg.seed)
    n = len(student.backbone.stages)
    Xs = X.astype(_dtype_of(student))
    for i in range(n):
        with core.no_grad():
            targets = np.concatenate(
                [teacher.backbone.prefix(Tensor(Xs[j : j + 512]), i + 1).data for j in range(0, len(Xs), 512)]
            )
        params = _stage_params(student, i + 1)
        opt = Adam(params, lr=cfg.lr)
        curve: list[float] = []
        for epoch in range(cfg.epochs_for_stage(i, n)):
            total = 0.0
            for idx in _batches(len(Xs), cfg.batch_size, rng):
                opt.zero_grad()
                loss = stage_loss(targets[idx], student.backbone.prefix(Tensor(Xs[idx]), i + 1))
                _check_finite(loss, f"stage {i} distillation")
                core.backward(loss)
                opt.step()
                total += loss.item() * len(idx)
            curve.append(total / len(Xs))
            logger.info("stage %d epoch %d loss %.5f", i, epoch, curve[-1])
            if cfg.early_stop and len(curve) > 3 and curve[-4] - curve[-1] < 1e-4 * abs(curve[-4]):
                break
        report.stage_losses.append(curve)
    return student


def finetune_final_stage(
    teacher: Network | None,
    student: Network,
    train: WindowSet,
    val: WindowSet | None,
    cfg: DistillConfig,
    report: TrainReport | None = None,
    select: bool = True,
) -> Network:
    """Memory clone, fine-tune under the logits loss, then auto-search.

    With ``select=False`` the fine-tuned ensemble is returned as is.
    """
    report = report if report is not None else TrainReport()
    if cfg.enable_memory:
        if teacher is None or teacher.ensemble is None or student.ensemble is None:
            raise PairingError("memory distillation needs head ensembles on both teacher and student")
        if teacher.backbone.out_dim != student.backbone.out_dim:
            raise PairingError("teacher and student pooled dims differ")
        clone_memory(teacher.ensemble, student.ensemble)
    X = train.X.astype(_dtype_of(student))
    teacher_logits = teacher.predict(X).astype(np.float64) if (cfg.enable_logits and teacher is not None) else None
    rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(student.parameters(), lr=cfg.lr if cfg.ft_lr is None else cfg.ft_lr)
    for epoch in range(cfg.ft_epochs):
        total = 0.0
        for idx in _batches(len(X), cfg.batch_size, rng):
            opt.zero_grad()
            logits = student(Tensor(X[idx]))
            if teacher_logits is None:
                loss = core.cross_entropy(logits, train.y[idx])
            elif cfg.logits_loss == "hinton":
                loss = hinton_loss(logits, teacher_logits[idx], train.y[idx], cfg.lam, cfg.tau)
            else:
                loss = logits_loss_LD(logits, teacher_logits[idx], train.y[idx], cfg.lam, cfg.tau, cfg.gamma)
            _check_finite(loss, "fine-tuning")
            core.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        report.epoch_loss.append(total / len(X))
        acc = _record_eval(student, val, report)
        logger.info("fine-tune epoch %d loss %.4f val_acc %.4f", epoch, report.epoch_loss[-1], acc)
    report.ft_epochs = cfg.ft_epochs
    ens = student.ensemble
    if ens is not None:
        report.selected_head = ens.best_head()
    return auto_search_select(student) if select else student


def smldist(
    teacher: Network,
    student: Network,
    train: WindowSet,
    val: WindowSet | None,
    cfg: DistillConfig,
    select: bool = True,
) -> tuple[Network, TrainReport]:
    """Full pipeline; the ``enable_*`` flags give the ablation variants."""
    cfg.validate()
    check_pairing(teacher, student)
    report = TrainReport(mode=run_mode(cfg), flags=cfg.flags)
    if cfg.enable_stage:
        stage_distill(teacher, student, train.X, cfg, report)
    student = finetune_final_stage(teacher, student, train, val, cfg, report, select)
    return student, report


def copy_network(net: Network) -> Network:
    return copy.deepcopy(net)
