"""
Victim training: mini-batch SGD on per-pixel cross-entropy, optionally on
PGD examples (adversarial training).
"""
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from tqdm import tqdm

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from shared.models import LossKind, LossName, SegDataset, TrainConfig
from shared.utils import NonFiniteError, TrainingDivergedError
from .attack import pgd_step, project
from .metrics import dataset_scores
from .objectives import loss_and_logit_grad
from .segmodel import ModelParams, backward, forward, init_params, predict, value_and_input_gradient
from .tensor_core import make_rng, uniform_noise

logger = logging.getLogger(__name__)

_CE = LossKind(name=LossName.CE)


def _pgd_example(params: ModelParams, image: np.ndarray, label: np.ndarray, eps: float,
                 steps: int, rng: np.random.Generator, ignore_index: int) -> np.ndarray:
    """k-step CE PGD with step eps/2 from a uniform random start."""
    x = project(image + uniform_noise(rng, image.shape, -eps, eps), image, eps)
    for _ in range(steps):
        _, grad = value_and_input_gradient(
            params, x, lambda logits: loss_and_logit_grad(_CE, logits, label, ignore_index=ignore_index)
        )
        x = pgd_step(x, grad, eps / 2.0, image, eps)
    return x


def train(dataset: SegDataset, config: TrainConfig, progress: bool = False) -> ModelParams:
    """
    Train the fixed convnet victim.

    Each step averages the per-image mean CE gradients over a shuffled
    mini-batch. With `config.adv_steps > 0` every image is replaced by a
    PGD example at `config.adv_eps` before the update.

    Args:
        dataset: Training images and labels
        config: Training recipe
        progress: Show a tqdm bar over epochs

    Returns:
        Trained parameters (the initialization when epochs = 0)

    Raises:
        TrainingDivergedError: if a loss or gradient becomes non-finite
    """
    if len(dataset) == 0:
        raise ValueError("training needs at least one image")
    params = init_params(dataset.num_classes, seed=config.seed, in_channels=dataset.images.shape[1])
    rng = make_rng(config.seed)
    n = len(dataset)

    for epoch in tqdm(range(config.epochs), desc="train", disable=not progress):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            grads, batch_loss = None, 0.0
            try:
                for i in batch:
                    image, label = dataset.images[i], dataset.labels[i]
                    if config.adv_steps > 0:
                        image = _pgd_example(params, image, label, config.adv_eps,
                                             config.adv_steps, rng, dataset.ignore_index)
                    report = loss_and_logit_grad(_CE, forward(params, image), label,
                                                 ignore_index=dataset.ignore_index)
                    layer_grads, _ = backward(params, image, report.logit_grad)
                    batch_loss += report.scalar_loss
                    if grads is None:
                        grads = [(gw.copy(), gb.copy()) for gw, gb in layer_grads]
                    else:
                        grads = [(aw + gw, ab + gb) for (aw, ab), (gw, gb) in zip(grads, layer_grads)]
                if not np.isfinite(batch_loss):
                    raise NonFiniteError("batch loss")
                scale = 1.0 / len(batch)
                grads = [(gw * scale, gb * scale) for gw, gb in grads]
                params = params.apply_update(grads, config.learning_rate)
            except NonFiniteError as e:
                raise TrainingDivergedError(f"epoch {epoch}: {e}") from e
            epoch_loss += batch_loss
        logger.debug("epoch %d mean loss %.4f", epoch, epoch_loss / n)
    return params


def evaluate_clean(params: ModelParams, dataset: SegDataset) -> float:
    """Clean pixel accuracy (mean over images, percent)."""
    preds = [predict(params, image) for image in dataset.images]
    return dataset_scores(preds, list(dataset.labels), dataset.num_classes, dataset.ignore_index).acc


def train_and_check(dataset: SegDataset, config: TrainConfig, min_accuracy: Optional[float] = None,
                    progress: bool = False, eval_dataset: Optional[SegDataset] = None):
    """
    Train, then report clean accuracy on `eval_dataset` (held-out images);
    falls back to the training set when none is given. Warns when the
    accuracy is below `min_accuracy`.
    """
    params = train(dataset, config, progress=progress)
    scored = eval_dataset if eval_dataset is not None else dataset
    accuracy = evaluate_clean(params, scored)
    if min_accuracy is not None and accuracy < min_accuracy:
        split = "held-out" if eval_dataset is not None else "training"
        logger.warning("clean %s accuracy %.1f%% below %.1f%%", split, accuracy, min_accuracy)
    return params, accuracy
