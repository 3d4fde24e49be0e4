"""Two-layer LSTM sequence decoder with 2D attention over the encoder map.

Per step: the previous token is embedded, pushed through two stacked LSTM
cells, and the top hidden state queries every valid spatial position of M:

    g_ij  = tanh(Wm @ M_ij + Wh @ h_t)
    alpha = softmax over valid (i, j) of  wg . g_ij
    d_t   = sum_ij alpha_ij * M_ij

Logits are an affine map of [h_t ; d_t]. The holistic vector F primes the
LSTM state at step 0 through a dedicated projection; decoding proper starts
with the START token. Padded columns of M receive exactly zero attention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autograd as ag
from . import vocab as V
from .autograd import ContractViolation, Tensor
from .encoder import EncoderOutput
from .optim import ParamStore, fan_in_uniform


@dataclass
class DecoderConfig:
    hidden_size: int = 512
    embed_dim: int = 512
    att_dim: int = 512
    vocab_size: int = 68
    context_dim: int = 512  # channel count of M
    feature_dim: int = 512  # dimension of F
    max_steps: int = 10

    def to_json(self) -> dict:
        return {
            "hidden_size": self.hidden_size,
            "embed_dim": self.embed_dim,
            "att_dim": self.att_dim,
            "vocab_size": self.vocab_size,
            "context_dim": self.context_dim,
            "feature_dim": self.feature_dim,
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DecoderConfig":
        return cls(**obj)


@dataclass
class DecoderState:
    h1: Tensor
    c1: Tensor
    h2: Tensor
    c2: Tensor
    t: int = 0


@dataclass
class AttentionMap:
    weights: np.ndarray  # (H', W'), zero on padded columns
    timestep: int


def _lstm_bias(hidden: int) -> np.ndarray:
    # forget-gate bias +1 for stable early training
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0
    return b


class AttentionDecoder:
    def __init__(self, config: DecoderConfig, rng: np.random.Generator):
        self.config = config
        self.store = ParamStore("decoder")
        s = self.store
        H, E, A = config.hidden_size, config.embed_dim, config.att_dim
        C, Vn = config.context_dim, config.vocab_size
        self.embed = s.add("embed", fan_in_uniform(rng, (Vn, E), Vn))
        self.f_in_w = s.add("f_in.weight", fan_in_uniform(rng, (E, config.feature_dim),
                                                          config.feature_dim))
        self.f_in_b = s.add("f_in.bias", np.zeros(E))
        self.lstm1_w = s.add("lstm1.weight", fan_in_uniform(rng, (4 * H, E + H), E + H))
        self.lstm1_b = s.add("lstm1.bias", _lstm_bias(H))
        self.lstm2_w = s.add("lstm2.weight", fan_in_uniform(rng, (4 * H, H + H), 2 * H))
        self.lstm2_b = s.add("lstm2.bias", _lstm_bias(H))
        self.w_m = s.add("att.wm", fan_in_uniform(rng, (A, C), C))
        self.w_h = s.add("att.wh", fan_in_uniform(rng, (A, H), H))
        self.w_g = s.add("att.wg", fan_in_uniform(rng, (1, A), A))
        self.out_w = s.add("out.weight", fan_in_uniform(rng, (Vn, H + C), H + C))
        self.out_b = s.add("out.bias", np.zeros(Vn))

    # ------------------------------------------------------------------
    def attend(self, M: Tensor, h: Tensor, pos_mask: np.ndarray) -> Tuple[Tensor, Tensor]:
        """Returns (d, alpha): context vectors (B, C) and weights (B, H'*W')."""
        B, C, Hp, Wp = M.shape
        if not pos_mask.any(axis=(1, 2)).all():
            raise ContractViolation("attention with zero valid positions")
        proj_m = ag.pointwise_conv2d(M, self.w_m)  # (B, A, H', W')
        proj_h = ag.affine(h, self.w_h, np.zeros(self.config.att_dim, dtype=h.data.dtype))
        g = ag.tanh(ag.add(proj_m, ag.reshape(proj_h, (B, self.config.att_dim, 1, 1))))
        scores = ag.reshape(ag.pointwise_conv2d(g, self.w_g), (B, Hp * Wp))
        alpha = ag.softmax(scores, axis=1, mask=pos_mask.reshape(B, Hp * Wp))
        Mf = ag.reshape(M, (B, C, Hp * Wp))
        weighted = ag.mul(Mf, ag.reshape(alpha, (B, 1, Hp * Wp)))
        d = ag.tsum(weighted, axis=2)  # (B, C)
        return d, alpha

    def init_state(self, F: Tensor) -> DecoderState:
        """Prime the LSTMs with the projected holistic vector (step 0)."""
        if F.data.ndim == 1:
            F = ag.reshape(F, (1, F.shape[0]))
        if F.shape[1] != self.config.feature_dim:
            raise ContractViolation(
                f"holistic vector dim {F.shape[1]} != {self.config.feature_dim}"
            )
        B, H = F.shape[0], self.config.hidden_size
        x0 = ag.affine(F, self.f_in_w, self.f_in_b)
        zeros = lambda: Tensor(np.zeros((B, H), dtype=F.data.dtype))
        h1, c1 = ag.lstm_cell(x0, zeros(), zeros(), self.lstm1_w, self.lstm1_b)
        h2, c2 = ag.lstm_cell(h1, zeros(), zeros(), self.lstm2_w, self.lstm2_b)
        return DecoderState(h1=h1, c1=c1, h2=h2, c2=c2, t=0)

    def decode_step(self, state: DecoderState, prev_tokens, M: Tensor,
                    pos_mask: np.ndarray) -> Tuple[Tensor, DecoderState, Tensor]:
        """One decoding step for a batch; prev_tokens is (B,) token ids."""
        prev_tokens = np.atleast_1d(np.asarray(prev_tokens, dtype=np.int64))
        if prev_tokens.min() < 0 or prev_tokens.max() >= self.config.vocab_size:
            raise ContractViolation(f"token id out of range: {prev_tokens}")
        x = ag.gather_rows(self.embed, prev_tokens)
        h1, c1 = ag.lstm_cell(x, state.h1, state.c1, self.lstm1_w, self.lstm1_b)
        h2, c2 = ag.lstm_cell(h1, state.h2, state.c2, self.lstm2_w, self.lstm2_b)
        d, alpha = self.attend(M, h2, pos_mask)
        logits = ag.affine(ag.concat([h2, d], axis=1), self.out_w, self.out_b)
        new_state = DecoderState(h1=h1, c1=c1, h2=h2, c2=c2, t=state.t + 1)
        return logits, new_state, alpha

    # ------------------------------------------------------------------
    def teacher_forced_loss(self, enc_out: EncoderOutput, targets: Sequence[Sequence[int]]) -> Tensor:
        """Cross-entropy under teacher forcing, including the END prediction.

        All targets in the batch must share one length (bucket upstream)."""
        targets = [list(t) for t in targets]
        L = len(targets[0])
        if not 1 <= L <= 8:
            raise ContractViolation(f"target length {L} outside 1..8")
        if any(len(t) != L for t in targets):
            raise ContractViolation("mixed target lengths in one batch")
        tgt = np.asarray(targets, dtype=np.int64)
        if tgt.min() < 0 or tgt.max() >= self.config.vocab_size:
            raise ContractViolation("target token outside vocabulary")
        B = tgt.shape[0]
        state = self.init_state(enc_out.F)
        inputs = np.concatenate([np.full((B, 1), V.START, dtype=np.int64), tgt], axis=1)
        expected = np.concatenate([tgt, np.full((B, 1), V.END, dtype=np.int64)], axis=1)
        step_logits = []
        for t in range(L + 1):
            logits, state, _ = self.decode_step(state, inputs[:, t], enc_out.M,
                                                enc_out.position_mask)
            step_logits.append(logits)
        all_logits = ag.concat(step_logits, axis=0)  # (steps*B, V)
        flat_targets = expected.T.reshape(-1)
        return ag.cross_entropy(all_logits, flat_targets)

    def decode_greedy(self, enc_out: EncoderOutput, vocab: V.Vocabulary,
                      max_steps: Optional[int] = None):
        """Greedy decoding for a batch. Returns (strings, attention map lists)."""
        max_steps = max_steps or self.config.max_steps
        B = enc_out.F.shape[0] if enc_out.F.data.ndim == 2 else 1
        state = self.init_state(enc_out.F)
        tokens = np.full(B, V.START, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        seqs: List[List[int]] = [[] for _ in range(B)]
        maps: List[List[AttentionMap]] = [[] for _ in range(B)]
        Hp, Wp = enc_out.M.shape[2], enc_out.M.shape[3]
        for step in range(max_steps):
            logits, state, alpha = self.decode_step(state, tokens, enc_out.M,
                                                    enc_out.position_mask)
            tokens = logits.data.argmax(axis=1)
            a = alpha.data.reshape(B, Hp, Wp)
            for i in range(B):
                if done[i]:
                    continue
                maps[i].append(AttentionMap(weights=a[i].copy(), timestep=step))
                if tokens[i] == V.END:
                    done[i] = True
                else:
                    seqs[i].append(int(tokens[i]))
            if done.all():
                break
        strings = [vocab.decode(s) for s in seqs]
        return strings, maps


def dump_attention_heatmaps(maps: Sequence[AttentionMap], image: np.ndarray,
                            out_dir, prefix: str = "step") -> List[str]:
    """Write one overlay PNG per decoding step.

    ``image`` is (3, H, W) float in [0, 1]. Attention weights are upsampled
    with nearest neighbour and alpha-blended in red over the plate."""
    from pathlib import Path

    from PIL import Image

    if not maps:
        raise ContractViolation("no attention maps to dump")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, H, W = image.shape
    base = np.clip(image.transpose(1, 2, 0), 0.0, 1.0)
    paths = []
    for m in maps:
        w = m.weights
        peak = w.max() if w.max() > 0 else 1.0
        fy, fx = H // w.shape[0], W // w.shape[1]
        up = np.kron(w / peak, np.ones((max(fy, 1), max(fx, 1))))
        up = up[:H, :W]
        if up.shape != (H, W):  # pad if integer factors undershoot
            up = np.pad(up, ((0, H - up.shape[0]), (0, W - up.shape[1])), mode="edge")
        overlay = base.copy()
        overlay[..., 0] = np.clip(overlay[..., 0] * (1 - 0.6 * up) + 0.6 * up, 0, 1)
        overlay[..., 1] *= 1 - 0.6 * up
        overlay[..., 2] *= 1 - 0.6 * up
        path = out_dir / f"{prefix}_{m.timestep:02d}.png"
        Image.fromarray((overlay * 255).round().astype(np.uint8)).save(path)
        paths.append(str(path))
    return paths
