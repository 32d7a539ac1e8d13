"""CLIP wrapper: prompt and image embeddings, loss, and pixel gradients.

The service owns the model's input normalization, so clients send raw
[0, 1] RGB pixels and never embed model constants. Text embeddings are
cached by prompt.

Two backends:

* a pretrained checkpoint (default ``openai/clip-vit-base-patch32``),
  which needs the weights to be downloadable or already cached;
* ``random-tiny``, a deterministically initialized miniature of the same
  architecture that runs fully offline. Its embeddings are meaningless
  as semantics but exercise the exact inference and gradient path, which
  is what the protocol-level guarantees are about.
"""

from __future__ import annotations

import hashlib
import threading

import numpy as np
import torch

IMAGE_SIZE = 224
EMBED_DIM = 512
# OpenAI CLIP preprocessing constants
_MEAN = (0.48145466, 0.4578275, 0.40821073)
_STD = (0.26862954, 0.26130258, 0.27577711)


class ModelUnavailable(RuntimeError):
    """The requested backbone cannot be constructed (e.g. no weights)."""


def _build_random_tiny():
    from transformers import CLIPConfig, CLIPModel

    config = CLIPConfig(
        text_config=dict(hidden_size=64, intermediate_size=128,
                         num_hidden_layers=2, num_attention_heads=4,
                         max_position_embeddings=77, vocab_size=49408),
        vision_config=dict(hidden_size=64, intermediate_size=128,
                           num_hidden_layers=2, num_attention_heads=4,
                           image_size=IMAGE_SIZE, patch_size=32),
        projection_dim=EMBED_DIM,
    )
    torch.manual_seed(0)
    return CLIPModel(config), None


def _build_pretrained(name: str):
    from transformers import CLIPModel, CLIPTokenizerFast

    try:
        model = CLIPModel.from_pretrained(name)
        tokenizer = CLIPTokenizerFast.from_pretrained(name)
    except Exception as exc:
        raise ModelUnavailable(
            f"cannot load {name!r}; pass --model random-tiny for an "
            f"offline backbone ({exc})") from exc
    return model, tokenizer


class ClipLossModel:
    """Thread-safe loss evaluator around a CLIP backbone."""

    def __init__(self, spec: str = "openai/clip-vit-base-patch32",
                 device: str = "cpu"):
        self.spec = spec
        self.device = torch.device(device)
        if spec == "random-tiny":
            model, tokenizer = _build_random_tiny()
        else:
            model, tokenizer = _build_pretrained(spec)
        self.model = model.to(self.device).eval()
        self.tokenizer = tokenizer
        self._mean = torch.tensor(_MEAN, device=self.device).view(1, 3, 1, 1)
        self._std = torch.tensor(_STD, device=self.device).view(1, 3, 1, 1)
        self._prompt_cache: dict[str, torch.Tensor] = {}
        self._lock = threading.Lock()

    def _token_ids(self, prompt: str) -> torch.Tensor:
        if self.tokenizer is not None:
            enc = self.tokenizer([prompt], padding=True, truncation=True,
                                 return_tensors="pt")
            return enc["input_ids"].to(self.device)
        # offline backbone: deterministic pseudo-tokens from the prompt hash
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        vocab = self.model.config.text_config.vocab_size
        ids = [49406] + [int.from_bytes(digest[i:i + 2], "little") % (vocab - 2)
                         for i in range(0, 16, 2)] + [49407]
        return torch.tensor([ids], device=self.device)

    def text_embedding(self, prompt: str) -> torch.Tensor:
        with self._lock:
            cached = self._prompt_cache.get(prompt)
        if cached is not None:
            return cached
        with torch.no_grad():
            out = self.model.text_model(input_ids=self._token_ids(prompt))
            emb = self.model.text_projection(out.pooler_output)[0]
        with self._lock:
            self._prompt_cache[prompt] = emb
        return emb

    def image_embeddings(self, pixels: torch.Tensor) -> torch.Tensor:
        """(n, 3, H, W) [0, 1] pixels -> (n, d) embeddings, grad-capable."""
        x = (pixels - self._mean) / self._std
        out = self.model.vision_model(pixel_values=x)
        return self.model.visual_projection(out.pooler_output)

    def loss_and_grads(self, prompt: str,
                       pixels: np.ndarray) -> tuple[float, np.ndarray]:
        """Negative cosine similarity between the prompt embedding and the
        batch-averaged image embedding, with d(loss)/d(pixel).

        ``pixels`` is (n, 224, 224, 3) float32 in [0, 1]; gradients come
        back in the same layout.
        """
        text = self.text_embedding(prompt)
        # decoded request buffers are read-only views; torch needs a copy
        px = torch.from_numpy(np.array(pixels, dtype=np.float32)).to(self.device)
        px = px.permute(0, 3, 1, 2).contiguous().requires_grad_(True)
        image = self.image_embeddings(px).mean(dim=0)
        loss = -torch.nn.functional.cosine_similarity(image, text, dim=0)
        loss.backward()
        grads = px.grad.detach().permute(0, 2, 3, 1).cpu().numpy()
        return float(loss.item()), grads
