"""scikit-learn style surface: a fit/predict detector plus transform-shaped
wrappers around the augmentation and post-processing ops, so the pipeline
composes with the wider ecosystem (``get_params``/``set_params``, cloning,
``Pipeline``).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import postops, stylemix, trainer
from .grlnet import strip_inference
from .regloss import LossWeights
from .samples import LABEL_BONAFIDE, LABEL_MORPH, FaceSample


def _check_images(X, image_size=None) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ValueError(f"expected images shaped (n, H, W, 3), got {arr.shape}")
    if image_size is not None and arr.shape[1:3] != (image_size, image_size):
        raise ValueError(
            f"expected {image_size}x{image_size} images, got {arr.shape[1]}x{arr.shape[2]}"
        )
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return arr


class MorphDetector(ClassifierMixin, BaseEstimator):
    """Morph-attack detector with multi-level consistency regularization.

    ``fit`` accepts either a list of :class:`FaceSample` (full pairing
    metadata, y optional) or an image array ``(n, H, W, 3)`` with labels plus
    optional ``domains``/``attacks``/``origins``/``identity_ids`` arrays.
    Without pairing metadata the consistency terms find no counterparts and
    training reduces to the classification loss.

    ``predict_proba`` scores image arrays with the stripped inference model;
    column order follows ``classes_`` = [bonafide, morph].
    """

    def __init__(
        self,
        levels=4,
        aligned_dim=64,
        image_size=64,
        tau=0.1,
        eta=0.1,
        mu=0.05,
        delta=0.1,
        lr=0.02,
        momentum=0.9,
        batch_size=32,
        epochs=10,
        variant="grl",
        n_level=None,
        random_state=0,
    ):
        self.levels = levels
        self.aligned_dim = aligned_dim
        self.image_size = image_size
        self.tau = tau
        self.eta = eta
        self.mu = mu
        self.delta = delta
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.variant = variant
        self.n_level = n_level
        self.random_state = random_state

    def _config(self) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            lr=self.lr,
            momentum=self.momentum,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.random_state,
            variant=self.variant,
            levels=self.levels,
            aligned_dim=self.aligned_dim,
            image_size=self.image_size,
            loss_weights=LossWeights(tau=self.tau, eta=self.eta, mu=self.mu, delta=self.delta),
            n_level=self.n_level,
        )

    @staticmethod
    def _as_label(value) -> str:
        if value in (LABEL_BONAFIDE, LABEL_MORPH):
            return value
        return LABEL_MORPH if int(value) == 1 else LABEL_BONAFIDE

    def _build_samples(self, X, y, domains, attacks, origins, identity_ids):
        imgs = _check_images(X, self.image_size)
        if y is None:
            raise ValueError("y is required when X is an image array")
        n = len(imgs)
        samples = []
        for i in range(n):
            label = self._as_label(np.asarray(y).ravel()[i])
            ids = list(identity_ids[i]) if identity_ids is not None else None
            if ids is None:
                ids = [i] if label == LABEL_BONAFIDE else [2 * i, 2 * i + 1]
            samples.append(
                FaceSample(
                    id=f"x{i:05d}",
                    image=imgs[i],
                    landmarks=None,
                    label=label,
                    identity_ids=ids,
                    domain=str(domains[i]) if domains is not None else "array",
                    attack=str(attacks[i]) if attacks is not None else ("none" if label == LABEL_BONAFIDE else "lm"),
                    split="train",
                    origin=str(origins[i]) if origins is not None else f"x{i:05d}",
                )
            )
        return samples

    def fit(self, X, y=None, domains=None, attacks=None, origins=None, identity_ids=None):
        if len(X) > 0 and isinstance(X[0], FaceSample):
            samples = list(X)
        else:
            samples = self._build_samples(X, y, domains, attacks, origins, identity_ids)
        cfg = self._config()
        model, bank, loss_rows, _ = trainer.fit_samples(cfg, samples)
        self.model_ = model
        self.bank_ = bank
        self.inference_ = strip_inference(model)
        self.loss_trace_ = loss_rows
        self.classes_ = np.array([LABEL_BONAFIDE, LABEL_MORPH])
        self.n_features_in_ = int(np.prod((self.image_size, self.image_size, 3)))
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "inference_")
        import torch

        imgs = _check_images(X, self.image_size)
        x = torch.from_numpy(np.ascontiguousarray(imgs.transpose(0, 3, 1, 2), dtype=np.float32))
        self.inference_.eval()
        with torch.no_grad():
            probs = torch.softmax(self.inference_(x), dim=-1).numpy()
        return probs.astype(np.float64)

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def score_samples(self, X) -> np.ndarray:
        """Morph probability per image (higher = more attack-like)."""
        return self.predict_proba(X)[:, 1]


class StyleMixup(TransformerMixin, BaseEstimator):
    """Transformer form of inter-domain style mixup.

    ``fit`` memorizes the style pool; ``transform`` restyles each content
    image with a seeded pick from that pool.
    """

    def __init__(self, mode="color_wct", epsilon=1e-5, beta_low=0.1, random_state=0):
        self.mode = mode
        self.epsilon = epsilon
        self.beta_low = beta_low
        self.random_state = random_state

    def fit(self, X, y=None):
        pool = _check_images(X)
        if len(pool) == 0:
            raise ValueError("style pool must be non-empty")
        # validates mode/epsilon/beta_low ranges
        stylemix.StyleSpec(mode=self.mode, epsilon=self.epsilon, beta_low=self.beta_low)
        self.style_pool_ = pool
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "style_pool_")
        imgs = _check_images(X)
        out = np.empty_like(imgs)
        for i, img in enumerate(imgs):
            rng = np.random.default_rng([self.random_state, i])
            style = self.style_pool_[int(rng.integers(0, len(self.style_pool_)))]
            if self.mode == "color_wct":
                out[i] = stylemix.color_wct(img, style, self.epsilon)
            else:
                out[i] = stylemix.fourier_mix(img, style, self.beta_low)
        return out


class JpegCycle(TransformerMixin, BaseEstimator):
    """Transformer form of the JPEG re-compression cycle."""

    def __init__(self, quality=75, resolution=None):
        self.quality = quality
        self.resolution = resolution

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        imgs = _check_images(X)
        res = self.resolution or imgs.shape[1]
        return np.stack([postops.jpeg_cycle(img, self.quality, res) for img in imgs])


class PrintScan(TransformerMixin, BaseEstimator):
    """Transformer form of the print-scan simulation."""

    def __init__(self, random_state=0):
        self.random_state = random_state

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        imgs = _check_images(X)
        return np.stack(
            [postops.print_scan_sim(img, int(self.random_state) + i) for i, img in enumerate(imgs)]
        )
