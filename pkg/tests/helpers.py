"""Shared test stubs."""

from __future__ import annotations

import numpy as np

from sns.evaluators import EvalResult, EvaluatorInfo, LayerInfo


class ScriptedEvaluator:
    """Identity generator whose readout activations follow a fixed script.

    ``script[g]`` holds the population's target-unit activations for
    generation g (the last entry repeats forever). The generation counter
    advances only on calls that tap the readout layer, so reference passes
    and stimulus regeneration do not consume script entries.
    """

    def __init__(self, dim, script):
        self.script = [np.asarray(s, dtype=np.float32) for s in script]
        self.generation = 0
        self.info = EvaluatorInfo(
            code_dim=dim,
            stimulus_shape=(dim,),
            layers=(LayerInfo("input", dim), LayerInfo("readout", 1)),
            deterministic=False,
        )

    def evaluate(self, codes, taps):
        codes = np.asarray(codes, dtype=np.float32)
        out = {}
        for layer, idx in taps.units.items():
            if layer == "input":
                out["input"] = codes if idx is None else codes[:, idx]
            else:
                acts = self.script[min(self.generation, len(self.script) - 1)]
                out["readout"] = np.broadcast_to(
                    acts[: codes.shape[0], None], (codes.shape[0], 1)
                ).copy()
        if "readout" in taps.units:
            self.generation += 1
        stimuli = codes if taps.units.get("input", 0) is None else None
        return EvalResult(activations=out, units=dict(taps.units), stimuli=stimuli)
