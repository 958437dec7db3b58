"""Heuristic dynamic programming neuro-controller.

Two small networks: a critic that estimates the discounted cost-to-go from
the present operating point, and an action net that maps the operating point
to a duty cycle.  Both adapt online, one update per switching period.

The critic is trained by temporal differences.  With cost-to-go estimate
J(k) and per-step utility U(k), the residual

    e(k) = J(k) - gamma * J(k+1) - U(k)

is driven toward zero by semi-gradient descent: the k+1 term is treated as a
constant target, so only the J(k) evaluation is differentiated.  The action
net descends the critic's estimate directly: the duty cycle enters the
critic as an input, so d(cost-to-go)/d(duty) comes from the critic's input
gradient and backpropagates through the action net.

All network inputs are normalized by fixed scales so every feature is O(1);
the utility is computed on the normalized errors for the same reason, which
keeps the cost-to-go itself O(1) at the default discount.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mlp import Mlp

__all__ = [
    "CRITIC_SIZES",
    "ACTION_SIZES",
    "ControllerInput",
    "HdpConfig",
    "HdpController",
    "make_critic",
    "make_action",
    "utility",
    "td_error",
    "td_update",
]

# critic sees [v_o, i_l, e_v, e_i, duty] (normalized); action sees the first four
CRITIC_SIZES = [5, 5, 5, 1]
ACTION_SIZES = [4, 5, 5, 1]


def make_critic(seed: int = 0) -> Mlp:
    """Fresh cost-to-go estimator with a linear (unbounded) output."""
    return Mlp.init(CRITIC_SIZES, output_activation="linear", seed=seed)


def make_action(seed: int = 0) -> Mlp:
    """Fresh policy net; the sigmoid output is mapped affinely onto the duty
    limits, so the command can never leave them."""
    return Mlp.init(ACTION_SIZES, output_activation="sigmoid", seed=seed)


def utility(e_v: float, e_i: float, k_v: float = 1.0, k_i: float = 0.2) -> float:
    """Per-step cost: weighted Euclidean norm of the two tracking errors."""
    return math.sqrt(k_v * e_v * e_v + k_i * e_i * e_i)


def td_error(j_now: float, j_next: float, u_now: float, gamma: float) -> float:
    """Temporal-difference residual of the cost-to-go recursion."""
    return j_now - gamma * j_next - u_now


def td_update(
    critic: Mlp,
    x_now: np.ndarray,
    x_next: np.ndarray,
    u_now: float,
    gamma: float,
    learning_rate: float,
    epochs: int = 1,
) -> float:
    """Fit the critic toward u_now + gamma * J(x_next) at x_now.

    The bootstrap target is evaluated once and held fixed across the inner
    epochs (semi-gradient).  Returns the residual remaining after the last
    update (with zero epochs or zero rate, simply the current residual).
    """
    j_next, _ = critic.forward(x_next)
    target = float(j_next[0])
    for _ in range(epochs):
        j_now, cache = critic.forward(x_now)
        resid = td_error(float(j_now[0]), target, u_now, gamma)
        # loss 0.5*resid^2, so d(loss)/d(output) is the residual itself
        grads = critic.grad_weights(cache, np.array([resid]))
        critic.apply_update(grads, learning_rate)
    j_now, _ = critic.forward(x_now)
    return td_error(float(j_now[0]), target, u_now, gamma)


@dataclass(frozen=True)
class ControllerInput:
    """One cycle's measurements, assembled by the harness.

    e_v and e_i are the setpoint errors exactly as the harness computed
    them.  duty_prev is the duty actually applied over the period that
    produced this measurement; the delayed critic update evaluates the
    previous cycle at this duty, so a harness that perturbs the command
    (probing noise during practice) must report the perturbed value."""

    v_o: float
    i_l: float
    e_v: float
    e_i: float
    duty_prev: float = 0.0

    def __post_init__(self) -> None:
        if not all(
            map(math.isfinite, (self.v_o, self.i_l, self.e_v, self.e_i, self.duty_prev))
        ):
            raise ValueError("controller inputs must be finite")


@dataclass(frozen=True)
class HdpConfig:
    gamma: float = 0.85
    # per-cycle adaptation rates while a run learns; the offline pipeline
    # passes its own sweep rates.  At 20 kHz even modest rates compound
    # over a 50 ms run into duty drift past the band tolerance.
    lr_critic: float = 1e-4
    lr_action: float = 1e-6
    k_v: float = 1.0
    k_i: float = 0.1
    epochs_critic: int = 1
    epochs_action: int = 1
    # scales for [v_o, i_l, e_v, e_i, duty]
    norm_scales: tuple[float, float, float, float, float] = (
        200.0,
        10.0,
        200.0,
        10.0,
        1.0,
    )
    duty_limits: tuple[float, float] = (0.05, 0.95)

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.lr_critic < 0.0 or self.lr_action < 0.0:
            raise ValueError("learning rates must be >= 0")
        if self.k_v < 0.0 or self.k_i < 0.0 or self.k_v + self.k_i == 0.0:
            raise ValueError("utility weights must be >= 0 and not both zero")
        if self.epochs_critic < 0 or self.epochs_action < 0:
            raise ValueError("inner epoch counts must be >= 0")
        if len(self.norm_scales) != 5 or any(s <= 0.0 for s in self.norm_scales):
            raise ValueError(f"need 5 positive norm_scales, got {self.norm_scales}")
        d_min, d_max = self.duty_limits
        if not 0.0 <= d_min < d_max <= 1.0:
            raise ValueError(f"bad duty limits {self.duty_limits}")


class HdpController:
    """Online actor-critic duty-cycle controller.

    Call control_step once per switching period with the cycle's
    measurements.  With learning enabled the critic is updated from the
    previous period's transition and the action net from the critic, before
    the period's duty command is formed.  Updates are plain arithmetic on
    fixed-seed nets, so a run is bit reproducible.
    """

    def __init__(self, critic: Mlp, action: Mlp, config: HdpConfig | None = None):
        config = config or HdpConfig()
        # duck-typed critics (anything with forward/grad_input/grad_weights)
        # are allowed; shape-check only the real thing
        if isinstance(critic, Mlp) and (critic.n_inputs != 5 or critic.n_outputs != 1):
            raise ValueError(f"critic must map 5 -> 1, got {critic.layer_sizes}")
        if action.layer_sizes[0] != 4 or action.layer_sizes[-1] != 1:
            raise ValueError(f"action net must map 4 -> 1, got {action.layer_sizes}")
        if action.output_activation != "sigmoid":
            raise ValueError("action net needs a sigmoid output")
        self.critic = critic
        self.action = action
        self.config = config
        # (normalized state inputs, utility) of the previous period, None
        # until one period has been observed; the duty slot of the previous
        # critic input is taken from the next measurement's duty_prev, which
        # is the duty actually applied (the harness may have modified the
        # command, e.g. probing noise during practice)
        self._prev: tuple[np.ndarray, float] | None = None

    def reset_transition_buffer(self) -> None:
        """Forget the stored transition, e.g. across a simulation restart."""
        self._prev = None

    def duty_from_action(self, a: np.ndarray) -> float:
        """Map the policy output in (0,1) onto the duty limits."""
        d_min, d_max = self.config.duty_limits
        y, _ = self.action.forward(a)
        return d_min + float(y[0]) * (d_max - d_min)

    def critic_update(self, x_prev: np.ndarray, x_now: np.ndarray, u_prev: float) -> float:
        cfg = self.config
        return td_update(
            self.critic, x_prev, x_now, u_prev, cfg.gamma, cfg.lr_critic, cfg.epochs_critic
        )

    def action_update(self, a: np.ndarray) -> None:
        """Descend the critic's cost-to-go with respect to the policy weights."""
        cfg = self.config
        d_min, d_max = cfg.duty_limits
        span = d_max - d_min
        d_scale = cfg.norm_scales[4]
        for _ in range(cfg.epochs_action):
            y, cache = self.action.forward(a)
            duty = d_min + float(y[0]) * span
            x = np.append(a, duty / d_scale)
            _, critic_cache = self.critic.forward(x)
            dj_dx = self.critic.grad_input(critic_cache, np.ones(1))
            # chain rule through the affine duty map and the normalization
            upstream = dj_dx[-1] * span / d_scale
            grads = self.action.grad_weights(cache, np.array([upstream]))
            self.action.apply_update(grads, cfg.lr_action)

    def control_step(
        self, measurement: ControllerInput, learn: bool = True
    ) -> tuple[float, float]:
        """One switching period: returns (duty command, cost-to-go estimate).

        With learn set, first fits the critic on the buffered transition
        that lands in this measurement, then improves the action net through
        the critic, and only then forms the period's command.
        """
        cfg = self.config
        s = cfg.norm_scales
        m = measurement
        a = np.array([m.v_o / s[0], m.i_l / s[1], m.e_v / s[2], m.e_i / s[3]])
        if learn:
            if self._prev is not None:
                # the stored transition lands in the present state; evaluate
                # it with the duty the current policy would command here
                d_hat = self.duty_from_action(a)
                x_hat = np.append(a, d_hat / s[4])
                a_prev, u_prev = self._prev
                x_prev = np.append(a_prev, m.duty_prev / s[4])
                self.critic_update(x_prev, x_hat, u_prev)
            self.action_update(a)
        duty = self.duty_from_action(a)
        x = np.append(a, duty / s[4])
        j_now, _ = self.critic.forward(x)
        j_est = float(j_now[0])
        u_now = utility(m.e_v / s[2], m.e_i / s[3], cfg.k_v, cfg.k_i)
        self._prev = (a, u_now)
        return duty, j_est
