"""Skeleton for serving a real pretrained translation model.

The wire loop in server.py only needs three things from a backend: a
model_name, a hidden_dim, and step(src_tokens, tgt_tokens) -> StepReply.
This module shows where an actual consecutive NMT model would plug in.
Nothing here loads weights; every hook raises until filled in.

A real integration would:
  * load the frozen full-sentence model once, in __init__;
  * encode the source prefix fresh on every request (requests are
    stateless, so no KV-cache carries over between calls);
  * run one greedy decoder step conditioned on the committed target
    prefix and return the argmax token, whether it was end-of-sentence,
    the end-of-sentence probability, and the decoder's final hidden
    layer (pre-projection) as the stopping-controller feature vector.
"""

from __future__ import annotations

from .server import StepReply


class RealModelAdapter:
    """Fill in the three hooks to serve a real model over the bridge."""

    def __init__(self, model_name: str, hidden_dim: int):
        self.model_name = model_name
        self.hidden_dim = hidden_dim

    # -- hooks ----------------------------------------------------------

    def encode(self, src_tokens: list[str]):
        """Run the frozen encoder over the source prefix.

        Returns whatever state the decoder hook needs (e.g. the encoder
        memory). Called once per request with the full revealed prefix.
        """
        raise NotImplementedError("plug the real encoder in here")

    def decode_step(self, encoded, tgt_tokens: list[str]):
        """One greedy decoder step after the committed target prefix.

        Must return (next_token: str, eos: bool, eos_prob: float,
        hidden_state: sequence of hidden_dim floats). The hidden state is
        fed to the stopping controller on the client side, so it has to
        be the same layer the controller was trained on.
        """
        raise NotImplementedError("plug the real decoder step in here")

    # -- backend protocol -------------------------------------------------

    def step(self, src_tokens, tgt_tokens) -> StepReply:
        if len(src_tokens) == 0:
            raise ValueError("src must not be empty")
        encoded = self.encode(list(src_tokens))
        token, eos, eos_prob, hidden = self.decode_step(encoded, list(tgt_tokens))
        hidden = tuple(float(x) for x in hidden)
        if len(hidden) != self.hidden_dim:
            raise ValueError(
                f"decode_step returned {len(hidden)} hidden values, "
                f"advertised hidden_dim is {self.hidden_dim}"
            )
        return StepReply(
            next_token=str(token),
            eos=bool(eos),
            eos_prob=float(eos_prob),
            hidden_state=hidden,
        )
