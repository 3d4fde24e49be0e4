"""Full recognizer: encoder + attention decoder + checkpoint plumbing."""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint as ckpt
from .autograd import Tensor
from .decoder import AttentionDecoder, AttentionMap, DecoderConfig
from .encoder import Encoder, EncoderConfig, EncoderOutput
from .optim import ParamStore, seeded_rng
from .vocab import Vocabulary


class Recognizer:
    def __init__(self, enc_config: EncoderConfig, dec_config: Optional[DecoderConfig] = None,
                 vocab: Optional[Vocabulary] = None, seed: int = 0):
        self.vocab = vocab or Vocabulary()
        self.enc_config = enc_config
        if dec_config is None:
            dec_config = DecoderConfig(context_dim=enc_config.channels,
                                       feature_dim=enc_config.feature_dim,
                                       vocab_size=len(self.vocab))
        self.dec_config = dec_config
        self.seed = seed
        rng = seeded_rng(seed, "init")
        self.encoder = Encoder(enc_config, rng)
        self.decoder = AttentionDecoder(dec_config, rng)
        self.store = ParamStore()
        self.store.merge(self.encoder.store)
        self.store.merge(self.decoder.store)

    def parameter_count(self) -> int:
        return self.store.count()

    def encode(self, images: Tensor, valid_widths=None) -> EncoderOutput:
        return self.encoder.encode(images, valid_widths)

    def loss(self, images: Tensor, targets: Sequence[Sequence[int]], valid_widths=None) -> Tensor:
        return self.decoder.teacher_forced_loss(self.encode(images, valid_widths), targets)

    def recognize(self, images, valid_widths=None,
                  max_steps: Optional[int] = None) -> Tuple[List[str], List[List[AttentionMap]]]:
        """Greedy decoding of a (N, 3, H, W) batch or single (3, H, W) image."""
        if not isinstance(images, Tensor):
            images = Tensor(images)
        enc_out = self.encode(images, valid_widths)
        return self.decoder.decode_greedy(enc_out, self.vocab, max_steps)

    # ------------------------------------------------------------------
    def save(self, path, extra_header: Optional[dict] = None):
        header = {
            "model": "recognizer",
            "encoder": self.enc_config.to_json(),
            "decoder": self.dec_config.to_json(),
            "vocabulary": self.vocab.to_json(),
            "init_seed": self.seed,
            "init_scheme": "fan-in uniform, zero biases, forget-gate bias +1",
        }
        if extra_header:
            header.update(extra_header)
        ckpt.save(path, header, self.store.arrays())

    @classmethod
    def load(cls, path) -> "Recognizer":
        header, arrays = ckpt.load(path)
        if header.get("model") != "recognizer":
            raise ValueError(f"{path}: not a recognizer checkpoint")
        if "vocabulary" not in header:
            raise ValueError(f"{path}: checkpoint has no embedded vocabulary")
        vocab = Vocabulary.from_json(header["vocabulary"])
        enc_config = EncoderConfig.from_json(header["encoder"])
        dec_config = DecoderConfig.from_json(header["decoder"])
        model = cls(enc_config, dec_config, vocab, seed=header.get("init_seed", 0))
        model.store.load_arrays(arrays)
        return model


def resize_for_encoder(image: np.ndarray, input_height: int,
                       width_multiple: int = 4, max_width: int = 512) -> np.ndarray:
    """Resize (3, H, W) [0,1] image to the encoder height, preserving aspect
    ratio; width is rounded up to a stride multiple so valid-width arithmetic
    stays exact."""
    from PIL import Image

    _, h, w = image.shape
    new_w = max(width_multiple, int(round(w * input_height / h)))
    new_w = ((new_w + width_multiple - 1) // width_multiple) * width_multiple
    new_w = min(new_w, max_width)
    arr = (np.clip(image, 0, 1).transpose(1, 2, 0) * 255).round().astype(np.uint8)
    img = Image.fromarray(arr).resize((new_w, input_height), Image.BILINEAR)
    out = np.asarray(img, dtype=np.float32) / 255.0
    return out.transpose(2, 0, 1)
