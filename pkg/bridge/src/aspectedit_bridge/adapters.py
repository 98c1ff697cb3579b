"""Model adapters served behind the bridge.

An adapter answers one prediction at a time: given a latent, a timestep,
a conditioning string, and a guidance weight, return (epsilon, attn)
where attn is an iterable of (token_index, grid) pairs (may be empty).
"""

from __future__ import annotations

import numpy as np

from aspectedit.predictors import Conditioning, GmmPredictor, guided_epsilon


class EchoAdapter:
    """Returns the input latent as the noise prediction (conformance mode)."""

    concurrent_safe = True

    def predict(self, latent, t: int, cond: str | None, guidance: float):
        return np.asarray(latent), ()


class GmmAdapter:
    """Hosts the analytic Gaussian-mixture predictor behind the wire."""

    concurrent_safe = True

    def __init__(self, world, schedule, label_bindings=None):
        self.predictor = GmmPredictor(world, schedule)
        self.label_bindings = dict(label_bindings or {})

    def predict(self, latent, t: int, cond: str | None, guidance: float):
        conditioning = Conditioning.from_prompt(cond, self.label_bindings) if cond else None
        if conditioning is None or guidance == 1.0:
            result = self.predictor.predict(latent, t, conditioning)
        else:
            result = guided_epsilon(self.predictor, latent, t, conditioning, guidance)
        attn = [(ref.token_index, ref.grid) for ref in result.token_maps]
        return result.epsilon, attn
