"""End-to-end estimation runs: data generation, optimization, reporting.

One run draws a signal batch per iteration, injects fresh receiver noise,
propagates the twin, evaluates both loss components with exact gradients,
takes an Adam step on the raw parameter vector and periodically rebalances
the two loss weights by their gradient norms.  Everything is driven by
split seeded streams, so a config seed pins the whole trajectory
bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .grad import TwinSetup, evaluate, split_params
from .losses import CoordinateSet, LossWeights, default_scales, update_weights
from .nlse import (
    FiberParams,
    Frame,
    GridSpec,
    NumericOverflowError,
    _ssfm_forward,
)
from .signals import ComplexSignal, dbm_to_watts, generate_qam_symbols, pulse_shape

__all__ = [
    "Scenario",
    "Dataset",
    "TrainConfig",
    "TrainHistory",
    "AdamState",
    "TrainingDivergedError",
    "build_dataset",
    "sample_coordinates",
    "lr_at",
    "adam_step",
    "train",
    "compare_profiles",
]


class TrainingDivergedError(FloatingPointError):
    """Optimization produced non-finite numbers; carries a state snapshot."""

    def __init__(self, iteration: int, params: np.ndarray, history: "TrainHistory | None"):
        super().__init__(f"non-finite state at iteration {iteration}")
        self.iteration = iteration
        self.params = params
        self.history = history


@dataclass(frozen=True)
class Scenario:
    """Signal and link settings used to generate a dataset."""

    n_sym: int = 32
    order: int = 16
    rolloff: float = 0.1
    oversampling: int = 2
    launch_power_dbm: float = 0.0
    symbol_rate_gbd: float = 14.0
    length_km: float = 80.0
    beta2_ps2_per_km: float = -21.67
    gamma_per_w_km: float = 1.27
    alpha_per_km: float = 0.0
    m_reference: int = 800

    @property
    def symbol_period_ps(self) -> float:
        return 1e3 / self.symbol_rate_gbd

    @property
    def dt_ps(self) -> float:
        return self.symbol_period_ps / self.oversampling

    @property
    def n_samples(self) -> int:
        return self.n_sym * self.oversampling

    @property
    def truth(self) -> FiberParams:
        return FiberParams(
            alpha_per_km=self.alpha_per_km,
            beta2_ps2_per_km=self.beta2_ps2_per_km,
            gamma_per_w_km=self.gamma_per_w_km,
            length_km=self.length_km,
        )

    @property
    def frame(self) -> Frame:
        return Frame(
            symbol_period_ps=self.symbol_period_ps,
            length_km=self.length_km,
            launch_power_w=dbm_to_watts(self.launch_power_dbm),
        )

    def twin_grid(self, m_twin: int) -> GridSpec:
        return GridSpec(
            n=self.n_samples,
            dt_ps=self.dt_ps,
            m=m_twin,
            dz_km=self.length_km / m_twin,
        )


def truth_raws(frame: Frame, truth: FiberParams, scales: tuple[float, float]) -> tuple[float, float]:
    """Raw-variable values whose product with the scales reproduces the
    dimensionless truth coefficients bit-for-bit."""
    return (
        frame.beta2_to_norm(truth.beta2_ps2_per_km) / scales[0],
        frame.gamma_to_norm(truth.gamma_per_w_km) / scales[1],
    )


@dataclass
class Dataset:
    """Noise-free transmitted/received pairs plus the generating scenario.

    The dimensionless views used by the optimizer are cached at build time
    and come from the same stepping arithmetic the twin uses, so a twin that
    matches the generating link (same segment count and parameters)
    reproduces the references exactly, making the truth a true stationary
    point of the output loss.
    """

    pairs: list[tuple[ComplexSignal, ComplexSignal]]
    scenario: Scenario
    seed: int
    inputs_normalized: np.ndarray
    references_normalized: np.ndarray

    def __len__(self) -> int:
        return len(self.pairs)

    def stacked_normalized(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs_normalized, self.references_normalized


def build_dataset(n_pairs: int, scenario: Scenario, seed: int) -> Dataset:
    """Independent symbol draws per pair; references use the fine-step
    channel and stay noise-free (noise is injected per training iteration)."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    master = np.random.default_rng(seed)
    pair_seeds = master.integers(0, 2**63 - 1, size=n_pairs)
    inputs = []
    for s in pair_seeds:
        syms = generate_qam_symbols(scenario.n_sym, scenario.order, seed=int(s))
        inputs.append(
            pulse_shape(
                syms,
                rolloff=scenario.rolloff,
                oversampling=scenario.oversampling,
                launch_power_dbm=scenario.launch_power_dbm,
                symbol_rate_gbd=scenario.symbol_rate_gbd,
            )
        )

    frame = scenario.frame
    truth = scenario.truth
    scales = default_scales(frame)
    setup = TwinSetup.create(
        frame,
        n=scenario.n_samples,
        dt_ps=scenario.dt_ps,
        m=scenario.m_reference,
        scales=scales,
        alpha_per_km=scenario.alpha_per_km,
    )
    raw_b, raw_g = truth_raws(frame, truth, scales)
    root_p = math.sqrt(frame.launch_power_w)
    q0 = np.stack([sig.samples for sig in inputs]) / root_p
    cols, _ = _ssfm_forward(
        q0,
        setup.alpha_norm,
        np.full(scenario.m_reference, raw_b) * scales[0],
        np.full(scenario.m_reference, raw_g) * scales[1],
        setup.omega,
        setup.dz,
    )
    refs_norm = cols[..., scenario.m_reference]
    pairs = [
        (tx, ComplexSignal(samples=refs_norm[k] * root_p, dt_ps=tx.dt_ps))
        for k, tx in enumerate(inputs)
    ]
    return Dataset(
        pairs=pairs,
        scenario=scenario,
        seed=seed,
        inputs_normalized=q0,
        references_normalized=refs_norm,
    )


def sample_coordinates(grid: GridSpec, count: int, rng: np.random.Generator) -> CoordinateSet:
    """Uniform draws over the open rectangle (0, L) x (0, (N-1) dt).

    The time interval ends at the last sample instant, which is the edge of
    the interpolable surface.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    z = rng.random(count) * grid.length_km
    t = rng.random(count) * (grid.n - 1) * grid.dt_ps
    while np.any(z == 0.0):  # keep the domain strictly open
        z[z == 0.0] = rng.random(int(np.sum(z == 0.0))) * grid.length_km
    while np.any(t == 0.0):
        t[t == 0.0] = rng.random(int(np.sum(t == 0.0))) * (grid.n - 1) * grid.dt_ps
    return CoordinateSet(z_km=z, t_ps=t)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 10_000
    batch_signals: int = 20
    batch_coords: int = 800
    lr0: float = 1e-3
    lr_decay: float = 0.9
    lr_step: int = 5000
    snr_db: float = 20.0
    m_twin: int = 4
    seed: int = 0
    norm: str = "l1"
    physics: bool = True
    balance_every: int = 100
    balance_ema: float = 0.1
    init_mode: str = "normal"
    scale_beta2: float | None = None
    scale_gamma: float | None = None
    history_stride: int = 1

    def __post_init__(self):
        if self.iterations < 0 or self.batch_signals < 1 or self.batch_coords < 1:
            raise ValueError("counts must be positive")
        if self.lr0 <= 0 or not 0.0 < self.lr_decay <= 1.0 or self.lr_step < 1:
            raise ValueError("invalid learning-rate schedule")
        if self.init_mode not in ("normal", "zeros", "truth"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"unknown residual norm {self.norm!r}")
        if self.history_stride < 1 or self.balance_every < 1:
            raise ValueError("strides must be >= 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size))


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Staircase decay: lr0 * decay ** floor(step / lr_step)."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return cfg.lr0 * cfg.lr_decay ** (step // cfg.lr_step)


def adam_step(
    state: AdamState, grad: np.ndarray, lr: float, params: np.ndarray
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns fresh arrays."""
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("shape mismatch between state, gradient and parameters")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(
        m=m, v=v, step=t, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )


@dataclass
class TrainHistory:
    """Recorded trajectory plus the final averaged estimates."""

    iteration: np.ndarray
    l_io: np.ndarray
    l_p: np.ndarray
    lambda_io: np.ndarray
    lambda_p: np.ndarray
    lr: np.ndarray
    raw_params: np.ndarray
    m_twin: int
    truth: FiberParams
    frame: Frame
    scale_beta2: float
    scale_gamma: float
    raw_final: np.ndarray
    beta2_hat: float
    gamma_hat: float
    rel_err_beta2: float
    rel_err_gamma: float
    profile_beta2: np.ndarray
    profile_gamma: np.ndarray
    final_l_io: float
    config: TrainConfig
    dataset_seed: int

    def summary(self) -> dict:
        return {
            "version": __version__,
            "beta2_hat": self.beta2_hat,
            "gamma_hat": self.gamma_hat,
            "rel_err_beta2": self.rel_err_beta2,
            "rel_err_gamma": self.rel_err_gamma,
            "profile_beta2": list(self.profile_beta2),
            "profile_gamma": list(self.profile_gamma),
            "final_l_io": self.final_l_io,
            "truth_beta2": self.truth.beta2_ps2_per_km,
            "truth_gamma": self.truth.gamma_per_w_km,
            "dataset_seed": self.dataset_seed,
            "config_echo": dataclasses.asdict(self.config),
        }

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        cfg = json.dumps(dataclasses.asdict(self.config), sort_keys=True)
        n_raw = self.raw_params.shape[1] if self.raw_params.size else 2 * self.m_twin + 2
        cols = ["iteration", "l_io", "l_p", "lambda_io", "lambda_p", "lr"]
        cols += [f"raw_{k:02d}" for k in range(n_raw)]
        with path.open("w") as fh:
            fh.write(f"# fibertwin {__version__} config={cfg}\n")
            fh.write(",".join(cols) + "\n")
            for i in range(self.iteration.size):
                row = [
                    str(int(self.iteration[i])),
                    repr(float(self.l_io[i])),
                    repr(float(self.l_p[i])),
                    repr(float(self.lambda_io[i])),
                    repr(float(self.lambda_p[i])),
                    repr(float(self.lr[i])),
                ]
                row += [repr(float(x)) for x in self.raw_params[i]]
                fh.write(",".join(row) + "\n")

    def save_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


def _initial_params(cfg: TrainConfig, setup: TwinSetup, truth: FiberParams,
                    rng: np.random.Generator) -> np.ndarray:
    m = cfg.m_twin
    if cfg.init_mode == "normal":
        twin_raw = rng.standard_normal(2 * m)
    elif cfg.init_mode == "zeros":
        twin_raw = np.zeros(2 * m)
    else:  # truth
        raw_b, raw_g = truth_raws(
            setup.frame, truth, (setup.scale_beta2, setup.scale_gamma)
        )
        twin_raw = np.empty(2 * m)
        twin_raw[0::2] = raw_b
        twin_raw[1::2] = raw_g
    return np.concatenate([twin_raw, [0.0, 0.0]])  # residual constants start at zero


def _finalize(
    records: dict,
    params_init: np.ndarray,
    setup: TwinSetup,
    dataset: Dataset,
    cfg: TrainConfig,
) -> TrainHistory:
    if records["raw"]:
        raw_rows = np.asarray(records["raw"])
        tail = max(1, raw_rows.shape[0] // 10)
        raw_final = raw_rows[-tail:].mean(axis=0)
    else:
        raw_rows = np.empty((0, params_init.size))
        raw_final = params_init.copy()
    frame = setup.frame
    truth = dataset.scenario.truth
    raw_b, raw_g, raw_bh, raw_gh = split_params(raw_final, cfg.m_twin)
    beta2_hat = frame.beta2_from_norm(raw_bh * setup.scale_beta2)
    gamma_hat = frame.gamma_from_norm(raw_gh * setup.scale_gamma)
    profile_beta2 = frame.beta2_from_norm(raw_b * setup.scale_beta2)
    profile_gamma = frame.gamma_from_norm(raw_g * setup.scale_gamma)

    q0_all, refs_all = dataset.stacked_normalized()
    try:
        final_l_io = evaluate(
            setup, q0_all, refs_all, np.empty(0), np.empty(0), raw_final,
            want_grad=False, physics=False,
        ).l_io
    except FloatingPointError:
        final_l_io = float("nan")
    return TrainHistory(
        iteration=np.asarray(records["it"], dtype=int),
        l_io=np.asarray(records["l_io"]),
        l_p=np.asarray(records["l_p"]),
        lambda_io=np.asarray(records["lam_io"]),
        lambda_p=np.asarray(records["lam_p"]),
        lr=np.asarray(records["lr"]),
        raw_params=raw_rows,
        m_twin=cfg.m_twin,
        truth=truth,
        frame=frame,
        scale_beta2=setup.scale_beta2,
        scale_gamma=setup.scale_gamma,
        raw_final=raw_final,
        beta2_hat=float(beta2_hat),
        gamma_hat=float(gamma_hat),
        rel_err_beta2=abs(beta2_hat - truth.beta2_ps2_per_km) / abs(truth.beta2_ps2_per_km),
        rel_err_gamma=abs(gamma_hat - truth.gamma_per_w_km) / abs(truth.gamma_per_w_km),
        profile_beta2=np.asarray(profile_beta2),
        profile_gamma=np.asarray(profile_gamma),
        final_l_io=final_l_io,
        config=cfg,
        dataset_seed=dataset.seed,
    )


def train(dataset: Dataset, cfg: TrainConfig) -> TrainHistory:
    """Run the estimation loop and return the recorded history.

    Per iteration: draw a signal batch, add fresh receiver noise to the
    references, resample residual coordinates, take one Adam step on the
    combined loss and, on the balancing cadence, update the loss weights.
    Final estimates average the raw parameters over the last tenth of the
    recorded iterations.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    if cfg.batch_signals > len(dataset):
        raise ValueError("batch_signals exceeds the dataset size")
    sc = dataset.scenario
    frame = sc.frame
    scales = (
        (cfg.scale_beta2, cfg.scale_gamma)
        if cfg.scale_beta2 is not None and cfg.scale_gamma is not None
        else default_scales(frame)
    )
    setup = TwinSetup.create(
        frame,
        n=sc.n_samples,
        dt_ps=sc.dt_ps,
        m=cfg.m_twin,
        norm=cfg.norm,
        scales=scales,
        alpha_per_km=sc.alpha_per_km,
    )
    twin_grid = sc.twin_grid(cfg.m_twin)
    q0_all, refs_all = dataset.stacked_normalized()

    master = np.random.default_rng(cfg.seed)
    init_rng, batch_rng, noise_rng, coord_rng = master.spawn(4)

    params = _initial_params(cfg, setup, sc.truth, init_rng)
    params_init = params.copy()
    weights = LossWeights(1.0, 1.0) if cfg.physics else LossWeights(1.0, 0.0)
    adam = AdamState.zeros(params.size)
    snr_lin = 10.0 ** (cfg.snr_db / 10.0)

    records = {"it": [], "l_io": [], "l_p": [], "lam_io": [], "lam_p": [], "lr": [], "raw": []}

    for it in range(cfg.iterations):
        lr = lr_at(it, cfg)
        idx = batch_rng.choice(len(dataset), size=cfg.batch_signals, replace=False)
        refs = refs_all[idx]
        p_sig = np.mean(refs.real**2 + refs.imag**2, axis=1, keepdims=True)
        sigma = np.sqrt(p_sig / snr_lin / 2.0)
        shape = refs.shape
        noisy = refs + sigma * (
            noise_rng.standard_normal(shape) + 1j * noise_rng.standard_normal(shape)
        )
        if cfg.physics:
            coords = sample_coordinates(twin_grid, cfg.batch_coords, coord_rng)
            zeta, tau = coords.normalized(frame)
        else:
            zeta = np.empty(0)
            tau = np.empty(0)

        try:
            res = evaluate(
                setup, q0_all[idx], noisy, zeta, tau, params,
                want_grad=True, physics=cfg.physics,
            )
            grad = weights.lambda_io * res.grad_io + weights.lambda_p * res.grad_p
            if not np.all(np.isfinite(grad)):
                raise NumericOverflowError(cfg.m_twin)
        except (NumericOverflowError, FloatingPointError) as exc:
            partial = _finalize(records, params_init, setup, dataset, cfg)
            raise TrainingDivergedError(it, params.copy(), partial) from exc

        if it % cfg.history_stride == 0:
            records["it"].append(it)
            records["l_io"].append(res.l_io)
            records["l_p"].append(res.l_p)
            records["lam_io"].append(weights.lambda_io)
            records["lam_p"].append(weights.lambda_p)
            records["lr"].append(lr)
            records["raw"].append(params.copy())

        params, adam = adam_step(adam, grad, lr, params)

        if cfg.physics and (it + 1) % cfg.balance_every == 0:
            g_io = float(np.linalg.norm(res.grad_io))
            g_p = float(np.linalg.norm(res.grad_p))
            weights = update_weights(weights, g_io, g_p, ema=cfg.balance_ema)

    return _finalize(records, params_init, setup, dataset, cfg)


def compare_profiles(
    with_physics: TrainHistory, observation_only: TrainHistory, truth: FiberParams
) -> dict:
    """Profile accuracy and output mismatch of the two training modes.

    Both runs must come from the same dataset, seed and settings apart from
    the residual-loss switch.
    """
    cfg_a = dataclasses.asdict(with_physics.config)
    cfg_b = dataclasses.asdict(observation_only.config)
    cfg_a.pop("physics")
    cfg_b.pop("physics")
    if cfg_a != cfg_b or with_physics.dataset_seed != observation_only.dataset_seed:
        raise ValueError("histories are not comparable: configs or datasets differ")

    def rmse(profile: np.ndarray, target: float) -> float:
        return float(np.sqrt(np.mean((profile - target) ** 2)))

    return {
        "rmse_beta2_with_physics": rmse(with_physics.profile_beta2, truth.beta2_ps2_per_km),
        "rmse_beta2_observation_only": rmse(
            observation_only.profile_beta2, truth.beta2_ps2_per_km
        ),
        "rmse_gamma_with_physics": rmse(with_physics.profile_gamma, truth.gamma_per_w_km),
        "rmse_gamma_observation_only": rmse(
            observation_only.profile_gamma, truth.gamma_per_w_km
        ),
        "final_l_io_with_physics": with_physics.final_l_io,
        "final_l_io_observation_only": observation_only.final_l_io,
    }
