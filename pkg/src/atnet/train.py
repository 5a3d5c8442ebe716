"""Two-stage training.

Stage "prior" trains the prior network on (degraded -> clean) pairs with
dropout active.  Stage "restoration" freezes the prior network, computes
the uncertainty prior per example with a deterministic per-example seed,
and trains the restoration network on ((degraded, prior) -> clean).

Everything downstream of (seed, manifest, config) is deterministic: batch
order, dropout masks, and prior seeds all derive from the run seed, so two
runs produce bitwise-identical checkpoints and loss logs.  Per-iteration
wall-clock timings go to a sibling .timing.jsonl file that is excluded
from that guarantee.
"""

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .image import images_to_batch, load_image
from .losses import LossConfig, total_loss_and_grad
from .model import ForwardMode, NetworkSpec, compute_gradients, init_params
from .optim import AdamConfig, AdamState, adam_step
from .rng import SeededRng, derive_seed
from .synth import load_manifest
from .uncertainty import estimate_prior, prior_to_nchw

STAGE_PRIOR = "prior"
STAGE_RESTORATION = "restoration"
DEFAULT_ITERS = {STAGE_PRIOR: 200_000, STAGE_RESTORATION: 1_500_000}
LOG_NAME = "loss_log.jsonl"
TIMING_NAME = "loss_log.timing.jsonl"
CKPT_NAME = {STAGE_PRIOR: "atnet1.ckpt", STAGE_RESTORATION: "atnet.ckpt"}


@dataclass
class TrainRun:
    stage: str
    max_iters: int
    batch_size: int = 10
    seed: int = 0
    lr: float = 2e-4
    checkpoint_every: int = 0  # 0 = final checkpoint only
    mc_samples: int = 10
    prior_reduction: str = "per_channel"
    cache_prior: bool = False
    resume_from: str = ""  # checkpoint to continue from

    def validate(self):
        if self.stage not in (STAGE_PRIOR, STAGE_RESTORATION):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        return self


class PairDataset:
    """Manifest-backed (degraded, clean) pairs with an in-memory cache."""

    def __init__(self, manifest_path, cache: bool = True):
        self.records = load_manifest(manifest_path)
        self._cache = {} if cache else None

    def __len__(self):
        return len(self.records)

    def pair(self, idx: int):
        if self._cache is not None and idx in self._cache:
            return self._cache[idx]
        rec = self.records[idx]
        pair = (load_image(rec["degraded"]), load_image(rec["clean"]))
        if self._cache is not None:
            self._cache[idx] = pair
        return pair


def _batch_indices(n: int, batch_size: int, seed: int):
    """Endless seeded-shuffle batch stream; epoch e permutes with child seed e."""
    epoch = 0
    while True:
        order = SeededRng(derive_seed(seed, "epoch", epoch)).permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]
        epoch += 1


class _RunLogs:
    def __init__(self, out_dir: Path, append: bool = False):
        out_dir.mkdir(parents=True, exist_ok=True)
        mode = "a" if append else "w"
        self.loss_fh = open(out_dir / LOG_NAME, mode, encoding="utf-8")
        self.timing_fh = open(out_dir / TIMING_NAME, mode, encoding="utf-8")

    def write(self, iteration: int, aux: dict, total: float, wall_ms: float):
        rec = {"iter": iteration, "l1": aux["l1"], "lp": aux["lp"], "total": total}
        self.loss_fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self.timing_fh.write(
            json.dumps({"iter": iteration, "wall_ms": wall_ms}, sort_keys=True) + "\n"
        )

    def close(self):
        self.loss_fh.close()
        self.timing_fh.close()


def _train_loop(run: TrainRun, spec: NetworkSpec, params: dict, dataset: PairDataset,
                loss_cfg: LossConfig, out_dir: Path, make_input, meta: dict):
    """Shared optimizer loop; ``make_input(idxs, y_batch)`` builds the net input."""
    state = AdamState(params)
    adam_cfg = AdamConfig(lr=run.lr)
    batches = _batch_indices(len(dataset), run.batch_size, derive_seed(run.seed, "batches"))
    start_iter = 0
    if run.resume_from:
        ck = load_checkpoint(run.resume_from, expect_spec=spec)
        if ck.meta.get("stage") != run.stage:
            raise ValueError(
                f"resume checkpoint is for stage {ck.meta.get('stage')!r}, not {run.stage!r}"
            )
        params.clear()
        params.update(ck.params)
        if ck.optimizer is not None:
            state = AdamState.from_dict(params, ck.optimizer)
        start_iter = ck.step
        for _ in range(start_iter):  # batch stream is a pure function of iteration
            next(batches)
    logs = _RunLogs(out_dir, append=start_iter > 0)
    ckpt_path = out_dir / CKPT_NAME[run.stage]
    try:
        for iteration in range(start_iter, run.max_iters):
            t0 = time.perf_counter()
            idxs = next(batches)
            pairs = [dataset.pair(int(i)) for i in idxs]
            y_batch = images_to_batch([p[0] for p in pairs])
            x_batch = images_to_batch([p[1] for p in pairs])
            net_in = make_input(idxs, pairs, y_batch)
            drop_rng = SeededRng(derive_seed(run.seed, "dropout", iteration))

            def loss_fn(pred):
                return total_loss_and_grad(pred, x_batch, loss_cfg)

            total, grads, _, aux = compute_gradients(
                spec, params, net_in, loss_fn, ForwardMode.TRAIN, drop_rng
            )
            adam_step(params, grads, state, adam_cfg)
            logs.write(iteration, aux, total, (time.perf_counter() - t0) * 1e3)
            done = iteration + 1
            if run.checkpoint_every and done % run.checkpoint_every == 0 and done < run.max_iters:
                save_checkpoint(
                    out_dir / f"ckpt_iter{done:08d}.ckpt", spec, params, done,
                    optimizer=state.as_dict(), meta=meta,
                )
        save_checkpoint(
            ckpt_path, spec, params, run.max_iters, optimizer=state.as_dict(), meta=meta
        )
    finally:
        logs.close()
    return ckpt_path


def train_prior_network(run: TrainRun, manifest_path, loss_cfg: LossConfig,
                        out_dir, spec: NetworkSpec) -> Path:
    """Stage 1: optimize the prior network on (degraded -> clean)."""
    run.validate()
    loss_cfg.validate()
    if run.stage != STAGE_PRIOR:
        raise ValueError(f"expected stage {STAGE_PRIOR!r}, got {run.stage!r}")
    out_dir = Path(out_dir)
    dataset = PairDataset(manifest_path)
    params = init_params(spec, SeededRng(derive_seed(run.seed, "init", STAGE_PRIOR)))
    meta = {"stage": STAGE_PRIOR, "seed": run.seed}
    return _train_loop(run, spec, params, dataset, loss_cfg, out_dir,
                       lambda idxs, pairs, y: y, meta)


def train_restoration_network(run: TrainRun, manifest_path, atnet1_ckpt, loss_cfg: LossConfig,
                              out_dir, spec: NetworkSpec) -> Path:
    """Stage 2: freeze the prior network, train on ((degraded, prior) -> clean).

    The prior for manifest record k is computed with seed
    hash(run.seed, "prior", k), so it is identical every epoch and the
    optional cache changes throughput only, never results.
    """
    run.validate()
    loss_cfg.validate()
    if run.stage != STAGE_RESTORATION:
        raise ValueError(f"expected stage {STAGE_RESTORATION!r}, got {run.stage!r}")
    out_dir = Path(out_dir)
    ck1 = load_checkpoint(atnet1_ckpt)
    prior_spec, prior_params = ck1.spec, ck1.params
    expected_prior_ch = 1 if run.prior_reduction == "channel_mean" else 3
    if spec.in_channels != 3 + expected_prior_ch:
        raise ValueError(
            f"restoration spec expects {spec.in_channels} input channels, but "
            f"reduction {run.prior_reduction!r} provides {3 + expected_prior_ch}"
        )
    dataset = PairDataset(manifest_path)
    prior_cache = {} if run.cache_prior else None

    def prior_nchw(idx: int, y_img):
        if prior_cache is not None and idx in prior_cache:
            return prior_cache[idx]
        rng = SeededRng(derive_seed(run.seed, "prior", idx))
        prior, _ = estimate_prior(
            prior_spec, prior_params, y_img, run.mc_samples, rng, run.prior_reduction
        )
        arr = prior_to_nchw(prior)
        if prior_cache is not None:
            prior_cache[idx] = arr
        return arr

    def make_input(idxs, pairs, y_batch):
        priors = np.concatenate(
            [prior_nchw(int(i), pairs[k][0]) for k, i in enumerate(idxs)], axis=0
        )
        return np.concatenate([y_batch, priors], axis=1)

    params = init_params(spec, SeededRng(derive_seed(run.seed, "init", STAGE_RESTORATION)))
    meta = {
        "stage": STAGE_RESTORATION,
        "seed": run.seed,
        "prior_reduction": run.prior_reduction,
        "mc_samples": run.mc_samples,
    }
    return _train_loop(run, spec, params, dataset, loss_cfg, out_dir, make_input, meta)
