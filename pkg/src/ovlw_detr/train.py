"""Training loop: mixture sampling, augmentation, Group DETR loss, checkpoints."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from pathlib import Path

import torch

from .checkpoint import load_weights, read_checkpoint, save_checkpoint
from .config import RunConfig
from .data.augment import augment, resize
from .data.sampler import MixtureConfig, mixing_sampler
from .data.vocab import build_online_vocabulary
from .detector import OVLWDETR
from .errors import ConfigError, NumericalError
from .losses import LossWeights, group_detr_loss
from .pipeline import TextEmbedder, collate, load_source, sample_image

log = logging.getLogger(__name__)


class Trainer:
    """Owns the model, optimizer and data for one run.

    ``sources`` optionally supplies in-memory sample lists (one per
    configured source) instead of reading the annotation files.
    """

    def __init__(self, cfg: RunConfig, sources=None, log_path=None):
        self.cfg = cfg
        cfg.validate(check_paths=sources is None)
        torch.manual_seed(cfg.seed)
        if sources is None:
            sources = [load_source(s.annotations, s.format) for s in cfg.sources]
        if len(sources) != len(cfg.sources):
            raise ConfigError(f"{len(sources)} sample lists for {len(cfg.sources)} configured sources")
        self.sources = [list(s) for s in sources]
        self.mixture = MixtureConfig(tuple((s.name, s.weight) for s in cfg.sources),
                                     tuple(s.fraction for s in cfg.sources), cfg.seed)
        self.phrase_pool = sorted({p for src in self.sources for s in src for p in s.phrases})
        self.embedder = TextEmbedder(cfg.encoder, self.phrase_pool, cfg.model.text_dim, cfg.seed,
                                     cfg.prompt_template)
        self.table_hash = self.embedder.content_hash()

        self.model = OVLWDETR(cfg.model)
        if cfg.init_checkpoint:
            load_weights(self.model, read_checkpoint(cfg.init_checkpoint)["weights"])
        t = cfg.train
        self.optimizer = torch.optim.AdamW(self.model.parameters(), lr=t.lr, weight_decay=t.weight_decay)
        self.weights = LossWeights(cls=t.loss_cls, l1=t.loss_l1, giou=t.loss_giou, alpha=t.alpha)
        self.epoch = 0
        self.position = 0          # draws consumed within the current epoch
        self.global_step = 0
        self.out_dir = Path(cfg.output_dir)
        self.log_path = Path(log_path) if log_path else self.out_dir / "metrics.jsonl"
        self.history = []

    # -- data ---------------------------------------------------------------

    def epoch_draws(self, epoch: int):
        return mixing_sampler([len(s) for s in self.sources], self.mixture, epoch,
                              self.cfg.train.draws_per_epoch)

    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.epoch_draws(0)) / self.cfg.train.batch_size)

    def make_batch(self, draws, epoch: int, start: int):
        size = self.cfg.model.image_size
        samples = []
        for k, (src, idx) in enumerate(draws):
            s = self.sources[src][idx]
            s = s if s.image is not None else _with_image(s)
            if self.cfg.train.augment:
                s = augment(s, seed=[self.cfg.seed, epoch, start + k], size=size)
            else:
                s = resize(s, size)
            samples.append(s)
        vocab, labels = build_online_vocabulary(samples, self.cfg.train.max_vocab, self.phrase_pool,
                                                seed=[self.cfg.seed, epoch, start],
                                                prompt_template=self.cfg.prompt_template)
        images, targets = collate(samples, labels, size)
        table = self.embedder.table_for(vocab)
        return images, targets, table

    # -- optimisation ---------------------------------------------------------

    def train_step(self, images, targets, table, num_groups=None):
        self.model.train()
        out = self.model(images, table.as_tensor(), mode="train", num_groups=num_groups)
        losses = group_detr_loss(out, targets, self.weights)
        self.optimizer.zero_grad(set_to_none=True)
        losses.total.backward()
        if self.cfg.train.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.train.grad_clip)
        self.optimizer.step()
        return losses

    def fit(self, max_steps: int | None = None, checkpoint: bool = True):
        """Train until the configured epochs are done or ``max_steps`` more steps ran."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        bs = self.cfg.train.batch_size
        steps = 0
        with open(self.log_path, "a", encoding="utf-8") as log_fh:
            while self.epoch < self.cfg.train.epochs:
                draws = self.epoch_draws(self.epoch)
                while self.position < len(draws):
                    if max_steps is not None and steps >= max_steps:
                        return self.history
                    batch_draws = draws[self.position:self.position + bs]
                    self._apply_lr_drop()
                    images, targets, table = self.make_batch(batch_draws, self.epoch, self.position)
                    losses = self.train_step(images, targets, table)
                    record = {"step": self.global_step, "epoch": self.epoch, "position": self.position,
                              "lr": self.optimizer.param_groups[0]["lr"], "time": time.time(),
                              "draws": [list(d) for d in batch_draws], **losses.as_floats()}
                    if not math.isfinite(record["total"]):
                        self._dump_nan(record)
                    log_fh.write(json.dumps(record) + "\n")
                    log_fh.flush()
                    self.history.append(record)
                    self.position += len(batch_draws)
                    self.global_step += 1
                    steps += 1
                self.epoch += 1
                self.position = 0
                if checkpoint:
                    self.save(self.out_dir / f"checkpoint_epoch{self.epoch:03d}.pt")
                    self.save(self.out_dir / "last.pt")
        self.check_frozen()
        return self.history

    def _apply_lr_drop(self):
        t = self.cfg.train
        lr = t.lr * (0.1 if t.lr_drop_step is not None and self.global_step >= t.lr_drop_step else 1.0)
        for group in self.optimizer.param_groups:
            group["lr"] = lr

    def check_frozen(self):
        if self.embedder.content_hash() != self.table_hash:
            raise NumericalError("text embedding table changed during training")

    def _dump_nan(self, record):
        path = self.out_dir / "nan_batch.json"
        path.write_text(json.dumps(record, indent=1) + "\n", encoding="utf-8")
        raise NumericalError(f"non-finite loss at step {record['step']}; batch draws "
                             f"{record['draws']} written to {path}")

    # -- persistence ----------------------------------------------------------

    def save(self, path):
        state = {"epoch": self.epoch, "position": self.position, "global_step": self.global_step,
                 "optimizer": self.optimizer.state_dict(), "run_config": self.cfg.to_dict(),
                 "table_hash": self.table_hash, "torch_rng": torch.get_rng_state()}
        save_checkpoint(path, self.model, state)

    def resume(self, path):
        payload = read_checkpoint(path)
        state = payload.get("train_state")
        if state is None:
            raise ConfigError(f"{path} holds no training state")
        load_weights(self.model, payload["weights"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.epoch, self.position, self.global_step = state["epoch"], state["position"], state["global_step"]
        torch.set_rng_state(state["torch_rng"])
        if state.get("table_hash") != self.table_hash:
            log.warning("text table differs from the one used before resuming")
        return self


def _with_image(sample):
    return dataclasses.replace(sample, image=sample_image(sample))
