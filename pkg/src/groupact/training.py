"""Joint training of action and activity heads.

The loss for one scene is lambda_g * CE(activity) + lambda_a * CE(actions),
with the action term averaged over the scene's actors; a batch averages the
scene losses. Optimizers are plain SGD with momentum and Adam, with a
piecewise-constant learning-rate schedule.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericsError, ParseError, TrainingDiverged, UsageError
from .fileio import atomic_write_text, f17
from .model import branch_inputs
from .seeding import DROPOUT, SHUFFLE, rng_for
from .tensor import MODE_TRAIN, Graph, Tensor, add, cross_entropy, mul, reshape

OPT_SGD_MOMENTUM = "sgd-momentum"
OPT_ADAM = "adam"

CURVE_COLUMNS = ("iteration", "lr", "total_loss", "activity_loss", "action_loss")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = OPT_SGD_MOMENTUM
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-10
    # (start_iteration, lr) pairs; the last pair at or before the current
    # iteration applies. Must start at iteration 0.
    lr_schedule: tuple = ((0, 0.01),)
    batch_size: int = 16
    total_iterations: int = 20000
    lambda_g: float = 1.0
    lambda_a: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in (OPT_SGD_MOMENTUM, OPT_ADAM):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")
        sched = tuple((int(i), float(lr)) for i, lr in self.lr_schedule)
        if not sched or sched[0][0] != 0:
            raise ConfigError(f"lr_schedule must start at iteration 0, got {sched}")
        for (i0, _), (i1, _) in zip(sched, sched[1:]):
            if i1 <= i0:
                raise ConfigError(f"lr_schedule iterations must increase, got {sched}")
        # lr 0 is allowed: it makes a run a deliberate no-op.
        if any(lr < 0 for _, lr in sched):
            raise ConfigError(f"learning rates must be >= 0, got {sched}")
        object.__setattr__(self, "lr_schedule", sched)
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_iterations < 0:
            raise ConfigError(f"total_iterations must be >= 0, got {self.total_iterations}")
        if self.lambda_g < 0 or self.lambda_a < 0:
            raise ConfigError("loss weights must be >= 0")


def lr_at(schedule, iteration: int) -> float:
    if iteration < 0:
        raise UsageError(f"iteration must be >= 0, got {iteration}")
    current = schedule[0][1]
    for start, lr in schedule:
        if start > iteration:
            break
        current = lr
    return current


def loss_terms(pred, activity_label: int, action_labels):
    """(activity CE, mean per-actor action CE) as 0-d tensors."""
    g = pred.activity_logits
    ce_g = cross_entropy(reshape(g, (1, g.shape[0])), np.array([activity_label]))
    ce_a = cross_entropy(pred.action_logits, np.asarray(action_labels))
    return ce_g, ce_a


def joint_loss(pred, activity_label, action_labels, lambda_g=1.0, lambda_a=1.0) -> Tensor:
    ce_g, ce_a = loss_terms(pred, activity_label, action_labels)
    return add(mul(ce_g, lambda_g), mul(ce_a, lambda_a))


def sgd_momentum_step(params, velocity: dict, lr: float, momentum: float) -> None:
    """v <- momentum * v + grad; w <- w - lr * v, in place."""
    for name, t in params:
        v = velocity[name]
        v *= momentum
        v += t.grad
        t.data -= lr * v


def adam_step(params, m: dict, v: dict, step: int, lr: float, beta1: float, beta2: float,
              eps: float) -> int:
    """One bias-corrected Adam update (eps added outside the square root)."""
    step += 1
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for name, t in params:
        g = t.grad
        m[name] *= beta1
        m[name] += (1.0 - beta1) * g
        v[name] *= beta2
        v[name] += (1.0 - beta2) * (g * g)
        t.data -= lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + eps)
    return step


class SgdMomentum:
    kind = OPT_SGD_MOMENTUM

    def __init__(self, params, momentum: float = 0.9):
        self.params = list(params)
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in self.params}

    def zero_grads(self):
        for _, t in self.params:
            t.zero_grad()

    def step(self, lr: float):
        sgd_momentum_step(self.params, self.velocity, lr, self.momentum)

    def state_tensors(self):
        return [(f"optim/v/{name}", arr) for name, arr in self.velocity.items()]

    def load_state(self, extras: dict):
        for name in self.velocity:
            key = f"optim/v/{name}"
            if key not in extras:
                raise ParseError("<checkpoint>", 0, f"missing optimizer slot {key!r}")
            self.velocity[name][...] = extras[key]


class Adam:
    kind = OPT_ADAM

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-10):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(t.data) for name, t in self.params}
        self.v = {name: np.zeros_like(t.data) for name, t in self.params}
        self.count = 0

    def zero_grads(self):
        for _, t in self.params:
            t.zero_grad()

    def step(self, lr: float):
        self.count = adam_step(self.params, self.m, self.v, self.count, lr,
                               self.beta1, self.beta2, self.eps)

    def state_tensors(self):
        out = [("optim/step", np.array(float(self.count)))]
        out += [(f"optim/m/{name}", arr) for name, arr in self.m.items()]
        out += [(f"optim/v/{name}", arr) for name, arr in self.v.items()]
        return out

    def load_state(self, extras: dict):
        if "optim/step" not in extras:
            raise ParseError("<checkpoint>", 0, "missing optimizer slot 'optim/step'")
        self.count = int(extras["optim/step"])
        for slot, store in (("m", self.m), ("v", self.v)):
            for name in store:
                key = f"optim/{slot}/{name}"
                if key not in extras:
                    raise ParseError("<checkpoint>", 0, f"missing optimizer slot {key!r}")
                store[name][...] = extras[key]


def make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == OPT_SGD_MOMENTUM:
        return SgdMomentum(params, cfg.momentum)
    return Adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps)


@dataclass
class LossCurve:
    rows: list = field(default_factory=list)  # (iteration, lr, total, activity, action)

    def append(self, iteration, lr, total, activity, action):
        self.rows.append((int(iteration), float(lr), float(total), float(activity), float(action)))

    def write_csv(self, path):
        lines = [",".join(CURVE_COLUMNS)]
        for it, lr, total, act_g, act_a in self.rows:
            lines.append(f"{it},{f17(lr)},{f17(total)},{f17(act_g)},{f17(act_a)}")
        atomic_write_text(path, "\n".join(lines) + "\n")

    @staticmethod
    def read_csv(path):
        lines = open(path, encoding="utf-8").read().splitlines()
        if not lines or lines[0] != ",".join(CURVE_COLUMNS):
            raise ParseError(path, 1, "bad loss-curve header")
        curve = LossCurve()
        for no, line in enumerate(lines[1:], start=2):
            cells = line.split(",")
            if len(cells) != 5:
                raise ParseError(path, no, f"expected 5 columns, got {len(cells)}")
            try:
                curve.append(int(cells[0]), *[float(c) for c in cells[1:]])
            except ValueError as exc:
                raise ParseError(path, no, str(exc)) from None
        return curve


class _SceneStream:
    """Endless stream of scene indices: one shuffled permutation per epoch.

    Batches of a fixed size are drawn off the stream, so a batch may span an
    epoch boundary but never shrinks.
    """

    def __init__(self, count: int, rng):
        self.count = count
        self.rng = rng
        self.queue = deque()

    def skip(self, draws: int):
        epochs, offset = divmod(draws, self.count)
        for _ in range(epochs):
            self.rng.permutation(self.count)
        if offset:
            self.queue.extend(self.rng.permutation(self.count)[offset:])

    def take(self, size: int):
        while len(self.queue) < size:
            self.queue.extend(self.rng.permutation(self.count))
        return [self.queue.popleft() for _ in range(size)]


def train(model, scenes, cfg: TrainConfig, *, start_iteration: int = 0, optimizer=None) -> LossCurve:
    """Run iterations [start_iteration, cfg.total_iterations) over the scenes.

    Every random draw derives from cfg.seed, so the same inputs produce a
    bit-identical loss curve and final weights. Raises TrainingDiverged as
    soon as any forward or backward value goes non-finite.
    """
    if getattr(model, "kind", None) == "late":
        raise UsageError("late fusion has no joint objective; train each branch on its own")
    if not scenes:
        raise UsageError("train() needs a non-empty scene list")
    if start_iteration < 0:
        raise UsageError(f"start_iteration must be >= 0, got {start_iteration}")
    params = model.parameters()
    if optimizer is None:
        optimizer = make_optimizer(cfg, params)
    dropout_rng = rng_for(cfg.seed, DROPOUT)
    stream = _SceneStream(len(scenes), rng_for(cfg.seed, SHUFFLE))
    stream.skip(start_iteration * cfg.batch_size)
    curve = LossCurve()
    inv_batch = 1.0 / cfg.batch_size
    for it in range(start_iteration, cfg.total_iterations):
        lr = lr_at(cfg.lr_schedule, it)
        optimizer.zero_grads()
        batch = stream.take(cfg.batch_size)
        try:
            with Graph(MODE_TRAIN):
                total = None
                sum_g = 0.0
                sum_a = 0.0
                for idx in batch:
                    scene = scenes[idx]
                    pred = model.forward(branch_inputs(scene), MODE_TRAIN, dropout_rng)
                    ce_g, ce_a = loss_terms(pred, scene.activity, scene.actions)
                    term = add(mul(ce_g, cfg.lambda_g), mul(ce_a, cfg.lambda_a))
                    total = term if total is None else add(total, term)
                    sum_g += ce_g.item()
                    sum_a += ce_a.item()
                loss = mul(total, inv_batch)
                loss.backward()
        except NumericsError as exc:
            raise TrainingDiverged(
                f"non-finite loss at iteration {it} (lr {lr}): {exc}"
            ) from exc
        optimizer.step(lr)
        curve.append(it, lr, loss.item(), sum_g * inv_batch, sum_a * inv_batch)
    return curve
