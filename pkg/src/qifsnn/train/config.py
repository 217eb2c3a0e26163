"""Training hyperparameters and per-task defaults."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .data import TASKS


@dataclass(frozen=True)
class TrainConfig:
    task: str = "parabola"
    epochs: int = 10000
    batch_size: int = 10
    learning_rate: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_milestones: tuple[float, ...] = (0.6, 0.85)
    lr_decay: float = 0.5
    # network and neuron
    hidden: tuple[int, ...] = (64, 64, 64, 64)
    trial_T: float = 2.0
    tau_m: float = 1.0
    I_0: float = 1.25
    eps_guard: float = 1e-6
    w_scale: float = 0.5
    initial_phase: float = 0.0
    train_initial_phase: bool = False
    # codec
    encoding: str = "direct"
    grf_m: int = 5
    grf_beta: float = 1.5
    t_trans: float | None = None  # defaults to trial_T
    target_frac: float = 0.4
    # data
    n_train: int = 100
    n_test: int = 1000
    n_sensors: int = 51
    latent: int = 128
    trunk_hidden: tuple[int, ...] = (64, 64)
    n_boundary: int = 256
    # PINN
    fd_step_rel: float = 1e-3
    data_weight: float = 1.0
    output_range: tuple[float, float] | None = None
    # execution
    threads: int = 1
    deterministic: bool = True
    eval_every: int = 0
    lif_w_scale: float = 1.0
    lif_bias_range: tuple[float, float] = (0.5, 1.5)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam constants")
        if any(h < 1 for h in self.hidden) or not self.hidden:
            raise ValueError("hidden layer sizes must be positive")
        if self.trial_T <= 0:
            raise ValueError("trial_T must be positive")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @property
    def transmission_time(self) -> float:
        return self.trial_T if self.t_trans is None else self.t_trans


_TASK_DEFAULTS = {
    "parabola": dict(epochs=10000, batch_size=10, n_train=100, n_test=1000),
    "ricker": dict(epochs=2000, batch_size=10, n_train=400, n_test=2500),
    "ripple": dict(epochs=2000, batch_size=10, n_train=400, n_test=2500),
    "deeponet_poisson": dict(epochs=1500, batch_size=50, n_train=800, n_test=800, trial_T=3.0,
                             hidden=(64, 64), trunk_hidden=(64, 64), latent=128),
    "pinn_poisson": dict(epochs=500, batch_size=50, n_train=1000, n_test=1000, hidden=(64, 64),
                         output_range=(-10.0, 10.0)),
    "pinn_burgers": dict(epochs=15000, batch_size=50, n_train=6579, n_test=10201,
                         hidden=(64,) * 6, output_range=(-1.5, 1.5)),
    "pinn_beltrami": dict(epochs=10, batch_size=20, n_train=200, n_test=1000, hidden=(64,) * 6,
                          n_boundary=32, output_range=(-1.5, 1.5)),
}


def default_config(task: str, **overrides) -> TrainConfig:
    """Task defaults, optionally overridden field by field."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    return replace(TrainConfig(task=task, **_TASK_DEFAULTS[task]), **overrides)
