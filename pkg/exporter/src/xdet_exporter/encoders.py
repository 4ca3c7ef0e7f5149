"""Text/image encoders behind a tiny common interface.

Two backends: a CLIP backend via transformers (the real thing, needs model
weights on disk or a reachable hub), and a hash-seeded pseudo-encoder that is
fully deterministic and dependency-light, for tests and plumbing checks.
"""

from __future__ import annotations

import hashlib

import numpy as np

DEFAULT_MODEL = "openai/clip-vit-large-patch14"


class EncoderError(Exception):
    """Model could not be loaded or inference failed."""


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise EncoderError("encoder produced a zero vector")
    return mat / norms


class HashEncoder:
    """Deterministic offline encoder: vectors seeded from content hashes.

    Not semantically meaningful; exists so export plumbing can be exercised
    without model weights. Selected with model ids of the form "hash:<dim>".
    """

    def __init__(self, dim: int):
        if dim <= 0:
            raise EncoderError(f"hash encoder dim must be positive, got {dim}")
        self.dim = dim
        self.model_id = f"hash:{dim}"

    def _vector(self, payload: bytes) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.dim)

    def encode_texts(self, texts) -> np.ndarray:
        return _unit_rows(np.stack(
            [self._vector(b"text\x00" + t.encode("utf-8")) for t in texts]))

    def encode_images(self, images) -> np.ndarray:
        vecs = []
        for img in images:
            canon = img.convert("RGB").resize((32, 32))
            vecs.append(self._vector(b"image\x00" + canon.tobytes()))
        return _unit_rows(np.stack(vecs))


class ClipEncoder:
    """CLIP text/image encoder via transformers, eval mode, no grad.

    Texts are passed verbatim as prompts, without any template.
    """

    def __init__(self, model_id: str = DEFAULT_MODEL):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderError(f"clip backend unavailable: {exc}") from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id).eval()
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise EncoderError(f"failed to load model {model_id!r}: {exc}") from exc
        self._torch = torch
        self.model_id = model_id
        self.dim = int(self._model.config.projection_dim)

    def encode_texts(self, texts) -> np.ndarray:
        inputs = self._processor(text=list(texts), return_tensors="pt",
                                 padding=True, truncation=True)
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return _unit_rows(feats.double().cpu().numpy())

    def encode_images(self, images) -> np.ndarray:
        inputs = self._processor(images=[im.convert("RGB") for im in images],
                                 return_tensors="pt")
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return _unit_rows(feats.double().cpu().numpy())


def make_encoder(model_id: str):
    if model_id.startswith("hash:"):
        try:
            dim = int(model_id.split(":", 1)[1])
        except ValueError as exc:
            raise EncoderError(f"bad hash encoder spec {model_id!r}") from exc
        return HashEncoder(dim)
    return ClipEncoder(model_id)
