"""Analytic radially tuned readout: the standard conformance model.

Identity generator over R^dim; one readout unit responding
exp(-(||x|| - r)^2 / (2 tau^2)). Arithmetic contract for cross-process
reproducibility: inputs are float32, the norm and the exponential are
computed in float64 over those float32 values, and the result is cast back
to float32 before hitting the wire.
"""

from __future__ import annotations

import numpy as np

from ..adapter import AdapterSpec, LayerDecl


def build_adapter(dim="10", r="3.0", tau="1.0") -> AdapterSpec:
    dim = int(dim)
    r = float(r)
    tau = float(tau)
    if r <= 0 or tau <= 0:
        raise ValueError("r and tau must be positive")

    def generator(codes: np.ndarray) -> np.ndarray:
        return codes.astype(np.float32)

    def subject(stimuli: np.ndarray, layers) -> dict:
        radius = np.linalg.norm(stimuli.astype(np.float64), axis=1)
        response = np.exp(-((radius - r) ** 2) / (2.0 * tau**2))
        return {"readout": response.astype(np.float32)[:, None]}

    return AdapterSpec(
        code_dim=dim,
        stimulus_shape=(dim,),
        generator=generator,
        subject=subject,
        layers=(LayerDecl("readout", 1),),
        deterministic=True,
    )
