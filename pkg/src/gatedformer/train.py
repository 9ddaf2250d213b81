"""Training loop: teacher-forced label-smoothed cross entropy with AdamW."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


from . import tensor as T
from .checkpoint import load_checkpoint_full, save_checkpoint
from .config import RunConfig, require_training_sections
from .data import (Batch, Vocab, build_vocab, make_batches, read_parallel, synth_copy_task)
from .layers import label_smoothed_cross_entropy
from .metrics import token_accuracy
from .model import TransformerModel, build_model
from .optim import AdamW, LRSchedule, lr_at, rng_stream
from .tensor import Tape

log = logging.getLogger(__name__)

CSV_FIELDS = ("step", "lr", "train_loss", "val_loss", "val_token_acc")


class TrainingError(RuntimeError):
    pass


@dataclass
class Dataset:
    train_pairs: list
    valid_pairs: list
    src_vocab: Vocab
    tgt_vocab: Vocab


@dataclass
class TrainResult:
    model: TransformerModel
    dataset: Dataset
    losses: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    best_val_loss: float = math.inf
    dropped: int = 0


def prepare_data(run: RunConfig) -> Dataset:
    d = run.data
    if d.kind == "synthetic":
        rng = rng_stream(run.seed, "data-synth", 0)
        train = synth_copy_task(d.vocab_size, d.num_pairs, (d.min_len, d.max_len), rng, d.mode)
        seen = {tuple(s) for s, _ in train}
        valid_rng = rng_stream(run.seed, "data-synth", 1)
        valid = []
        while len(valid) < d.num_valid:
            for pair in synth_copy_task(d.vocab_size, d.num_valid, (d.min_len, d.max_len),
                                        valid_rng, d.mode):
                if tuple(pair[0]) not in seen and len(valid) < d.num_valid:
                    valid.append(pair)
        symbols = [f"s{i}" for i in range(d.vocab_size - 4)]
        vocab = build_vocab([symbols], min_freq=1)
        return Dataset(train, valid, vocab, vocab)
    train = read_parallel(d.train_src, d.train_tgt)
    valid = read_parallel(d.valid_src, d.valid_tgt)
    src_vocab = Vocab.load(d.src_vocab) if d.src_vocab else build_vocab((s for s, _ in train), d.min_freq)
    tgt_vocab = Vocab.load(d.tgt_vocab) if d.tgt_vocab else build_vocab((t for _, t in train), d.min_freq)
    return Dataset(train, valid, src_vocab, tgt_vocab)


def batch_loss(model: TransformerModel, batch: Batch, smoothing: float, rng=None):
    logits = model(batch.src_ids, batch.tgt_in_ids, batch.src_pad_mask, rng)
    flat = T.reshape(logits, (-1, logits.shape[-1]))
    return label_smoothed_cross_entropy(flat, batch.tgt_out_ids.reshape(-1), smoothing), logits


def evaluate(model: TransformerModel, batches: list, smoothing: float) -> tuple[float, float]:
    """Token-weighted validation loss and teacher-forced token accuracy."""
    loss_sum = correct = tokens = 0.0
    for b in batches:
        loss, logits = batch_loss(model, b, smoothing)
        n = b.num_tokens
        loss_sum += float(loss.data) * n
        correct += token_accuracy(logits, b.tgt_out_ids) * n
        tokens += n
    return loss_sum / tokens, correct / tokens


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def train(run: RunConfig, run_dir, resume: Optional[Path] = None,
          progress: bool = False) -> TrainResult:
    require_training_sections(run)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n")

    data = prepare_data(run)
    cfg = run.model_config(len(data.src_vocab), len(data.tgt_vocab))
    o, t = run.optim, run.train
    schedule = LRSchedule(o.schedule, o.peak_lr, o.warmup_steps)

    model = build_model(cfg)
    opt = AdamW(model.named_parameters(), o.beta1, o.beta2, o.epsilon, o.weight_decay, o.peak_lr,
                o.decay_all, o.clip_grad_norm)
    start, best = 0, math.inf
    if resume is not None:
        loaded, header, extras = load_checkpoint_full(resume)
        if loaded.cfg != cfg:
            raise TrainingError(f"{resume} was trained with a different model config")
        stored = dict(loaded.named_parameters())
        for name, p in model.named_parameters():
            p.data = stored[name].data
            opt.state.m[name] = extras.get(f"optim.m.{name}", opt.state.m[name])
            opt.state.v[name] = extras.get(f"optim.v.{name}", opt.state.v[name])
        state = header.get("train_state", {})
        start = opt.state.step = int(state.get("step", 0))
        best = float(state.get("best_val_loss", math.inf))

    valid_batches, _ = make_batches(data.valid_pairs, data.src_vocab, data.tgt_vocab,
                                    t.batch_size, cfg.max_seq_len)
    epoch_cache: dict[int, list] = {}
    result = TrainResult(model, data, best_val_loss=best)

    def batches_for(epoch: int) -> list:
        if epoch not in epoch_cache:
            epoch_cache.clear()
            epoch_cache[epoch], result.dropped = make_batches(
                data.train_pairs, data.src_vocab, data.tgt_vocab, t.batch_size, cfg.max_seq_len,
                rng_stream(run.seed, "data-shuffle", epoch))
        return epoch_cache[epoch]

    n_batches = len(batches_for(0))
    extra = {"vocab": {"src": data.src_vocab.itos, "tgt": data.tgt_vocab.itos}}

    def save(path: Path, step: int) -> None:
        moments = {f"optim.{kind}.{n}": arr for kind, d in (("m", opt.state.m), ("v", opt.state.v))
                   for n, arr in d.items()}
        save_checkpoint(model, path, {**extra, "train_state": {"step": step,
                                                               "best_val_loss": result.best_val_loss}},
                        moments)

    log_path = run_dir / t.log_path
    mode = "a" if resume is not None and log_path.exists() else "w"
    with open(log_path, mode, newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            writer.writerow(CSV_FIELDS)
        for step in range(start + 1, t.max_steps + 1):
            batch = batches_for((step - 1) // n_batches)[(step - 1) % n_batches]
            lr = lr_at(schedule, step)
            opt.zero_grad()
            try:
                with Tape() as tape:
                    loss, _ = batch_loss(model, batch, cfg.label_smoothing,
                                         rng_stream(run.seed, "dropout", step))
                tape.backward(loss)
                opt.step(lr)
            except FloatingPointError as exc:
                raise TrainingError(f"step {step}: {exc}") from exc
            train_loss = float(loss.data)
            result.losses.append(train_loss)
            val_loss = val_acc = None
            if step % t.eval_every == 0 or step == t.max_steps:
                val_loss, val_acc = evaluate(model, valid_batches, cfg.label_smoothing)
                result.evals.append((step, val_loss, val_acc))
                if progress:
                    log.info("step %d lr %.3g train %.4f val %.4f acc %.4f",
                             step, lr, train_loss, val_loss, val_acc)
                if val_loss < result.best_val_loss:
                    result.best_val_loss = val_loss
                    save(run_dir / t.best_checkpoint_path, step)
            writer.writerow([step, _fmt(lr), _fmt(train_loss), _fmt(val_loss), _fmt(val_acc)])
    save(run_dir / t.checkpoint_path, t.max_steps)
    return result
