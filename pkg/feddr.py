# feddr.py
"""
FedDR client extension: intermediate variable, proximal local training and
reflection, plus the hybrid switching configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from codec import ParamDelta
from models import FedDRSettings, HybridConfig
from nn.base import Gradients, Model, StructuralError
from pruning import PruneMask


@dataclass
class FedDRClientState:
    """Per-client FedDR variables; owned by one client, never shared"""
    theta_y: Model
    theta_local_prev: Model
    theta_x_prev: Model
    alpha: float
    eta: float
    enabled: bool = True
    sample_weighted: bool = False
    switched: bool = False
    history: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"feddr alpha must be positive, got {self.alpha}")
        if not self.eta > 0:
            raise ValueError(f"feddr eta must be positive, got {self.eta}")
        shapes = self.theta_y.shapes
        if self.theta_local_prev.shapes != shapes or self.theta_x_prev.shapes != shapes:
            raise StructuralError("FedDR state models must share one shape")

    @classmethod
    def initial(cls, global_model: Model, alpha: float, eta: float) -> "FedDRClientState":
        """θ^y, θ_local and θ^x all start at the shared initial global model."""
        return cls(
            theta_y=global_model.copy(),
            theta_local_prev=global_model.copy(),
            theta_x_prev=global_model.copy(),
            alpha=alpha,
            eta=eta,
        )


def _masked(model: Model, mask: PruneMask) -> list[np.ndarray]:
    mask.check_matches(model)
    return [np.where(bits, w, 0.0) for w, bits in zip(model.weights, mask.bits)]


def update_intermediate(state: FedDRClientState, global_model: Model, mask: PruneMask) -> Model:
    """θ^y ← M·θ^y_prev + α·(θ_global − M·θ_local_prev); biases use M = 1."""
    if global_model.shapes != state.theta_y.shapes:
        raise StructuralError(
            f"global model shapes {global_model.shapes} do not match state {state.theta_y.shapes}"
        )
    y_prev = _masked(state.theta_y, mask)
    local_prev = _masked(state.theta_local_prev, mask)
    weights = [
        y + state.alpha * (g - lp) for y, g, lp in zip(y_prev, global_model.weights, local_prev)
    ]
    biases = []
    for y, g, lp in zip(state.theta_y.biases, global_model.biases, state.theta_local_prev.biases):
        biases.append(None if y is None or g is None or lp is None else y + state.alpha * (g - lp))
    state.theta_y = global_model.with_weights(weights, biases)
    return state.theta_y


def proximal_gradient_term(theta: Model, theta_y: Model, eta: float) -> Gradients:
    """Gradient of (1 / 2η)·‖θ − θ^y‖²."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if theta.shapes != theta_y.shapes:
        raise StructuralError("proximal term needs congruent models")
    return Gradients(
        weights=[(w - wy) / eta for w, wy in zip(theta.weights, theta_y.weights)],
        biases=[
            None if b is None or by is None else (b - by) / eta
            for b, by in zip(theta.biases, theta_y.biases)
        ],
    )


@dataclass
class ProximalPull:
    """Proximal term handed to train_local"""
    anchor: Model
    eta: float

    def gradient(self, model: Model) -> Gradients:
        return proximal_gradient_term(model, self.anchor, self.eta)


def reflect(theta_local: Model, theta_y: Model) -> Model:
    """θ^x = 2·θ_local − θ^y."""
    if theta_local.shapes != theta_y.shapes:
        raise StructuralError("reflection needs congruent models")
    weights = [2.0 * w - wy for w, wy in zip(theta_local.weights, theta_y.weights)]
    biases = [
        None if b is None or by is None else 2.0 * b - by
        for b, by in zip(theta_local.biases, theta_y.biases)
    ]
    return theta_local.with_weights(weights, biases)


def feddr_delta(state: FedDRClientState, theta_x_new: Model, mask: PruneMask) -> ParamDelta:
    """θ^x_new − M·θ^x_prev; θ^x_new becomes the state's θ^x_prev."""
    if theta_x_new.shapes != state.theta_x_prev.shapes:
        raise StructuralError("θ^x shapes do not match the FedDR state")
    masked_prev = state.theta_x_prev.with_weights(_masked(state.theta_x_prev, mask))
    delta = ParamDelta.between(theta_x_new, masked_prev)
    state.theta_x_prev = theta_x_new.copy()
    return delta


def parse_hybrid_config(tag: Union[str, HybridConfig]) -> HybridConfig:
    if isinstance(tag, HybridConfig):
        return tag
    try:
        return HybridConfig(str(tag).strip().lower())
    except ValueError:
        valid = ", ".join(c.value for c in HybridConfig)
        raise ValueError(f"unknown FedDR configuration '{tag}' (expected one of: {valid})") from None


def apply_hybrid_config(
    config: Union[str, HybridConfig],
    prune_event_index: int,
    state: FedDRClientState,
    settings: Optional[FedDRSettings] = None,
) -> FedDRClientState:
    """
    Switch the client's FedDR behaviour once `prune_event_index` (1-based count of
    prune events so far) reaches the configured switch event.

    C1 turns FedDR off, C2 swaps in the post-switch alpha/eta, C3 does the same and
    also asks for sample-size weighted aggregation. FEDDR and FEDMAP_FEDDR never switch.
    """
    tag = parse_hybrid_config(config)
    settings = settings or FedDRSettings()
    if state.switched or prune_event_index < settings.switch_event:
        return state
    if tag in (HybridConfig.FEDDR, HybridConfig.FEDMAP_FEDDR):
        return state

    if tag == HybridConfig.C1:
        state.enabled = False
    else:
        state.alpha = settings.post_alpha
        state.eta = settings.post_eta
        state.sample_weighted = tag == HybridConfig.C3
    state.switched = True
    state.history.append(f"{tag.value}@event{prune_event_index}")
    return state
