"""Episode sampling, loss assembly, and the meta-train / meta-test loops.

An episode draws K classes and N+Q images per class; images are laid out
support-block-first (class-major), so support indices are [0, NK) and query
indices [NK, T).  Losses follow the gated per-generation sum

    total = sum_{gen=1..gate} gamma_gen * (light_edge + lambda*color_edge
                                           + beta*node)

where generations past the gate are computed for prediction but contribute
neither loss nor gradient.  All component losses are averaged over episodes
and queries so their scale does not move with B or Q.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import colorspace, labgnn, labnet, nnops
from .labgnn import GnnConfig, run_generations
from .labnet import LabNetConfig, encoder_forward
from .optim import Adam, ParamStore
from .tensor import Tensor, no_grad


@dataclass
class EpisodeSpec:
    k_way: int
    n_shot: int
    q_query: int
    batch: int = 1

    def __post_init__(self):
        if self.k_way < 2 or self.n_shot < 1 or self.q_query < 1 or self.batch < 1:
            raise ValueError(
                f"need K>=2, N>=1, Q>=1, B>=1; got {self.k_way}-way {self.n_shot}-shot "
                f"Q={self.q_query} B={self.batch}"
            )

    @property
    def nk(self) -> int:
        return self.k_way * self.n_shot

    @property
    def t(self) -> int:
        return self.k_way * (self.n_shot + self.q_query)


@dataclass
class EpisodeBatch:
    images: np.ndarray  # [B, T, 3, H, W] in [0,1]
    labels: np.ndarray  # [B, T] episode-local ids in [0, K)
    class_map: np.ndarray  # [B, K] dataset class ids


@dataclass
class LossWeights:
    lam: float = 0.1  # color-edge coefficient
    beta: float = 0.1  # node coefficient
    gamma: float = 1.0  # generation factor
    gate: int = 3  # accumulate loss over generations 1..gate
    gamma_mode: str = "constant"  # or "ramp": gamma * gen/gate

    def factor(self, gen: int) -> float:
        if self.gamma_mode == "ramp":
            return self.gamma * gen / self.gate
        return self.gamma


@dataclass
class LossBreakdown:
    node: list[float] = field(default_factory=list)
    light_edge: list[float] = field(default_factory=list)
    color_edge: list[float] = field(default_factory=list)
    total: float = 0.0
    accuracy: float | None = None


def sample_episode(split, spec: EpisodeSpec, rng: np.random.Generator) -> EpisodeBatch:
    """Draw spec.batch episodes: K classes then N+Q items per class, no replacement."""
    n_classes = len(split.class_images)
    if n_classes < spec.k_way:
        raise ValueError(
            f"split has {n_classes} classes, episode needs K={spec.k_way}"
        )
    need = spec.n_shot + spec.q_query
    b, t = spec.batch, spec.t
    sample = split.class_images[0]
    images = np.empty((b, t) + sample.shape[1:], dtype=sample.dtype)
    labels = np.empty((b, t), dtype=np.int64)
    class_map = np.empty((b, spec.k_way), dtype=np.int64)
    for e in range(b):
        chosen = rng.choice(n_classes, size=spec.k_way, replace=False)
        class_map[e] = [split.class_ids[c] for c in chosen]
        pos_s = 0
        pos_q = spec.nk
        for local, c in enumerate(chosen):
            pool = split.class_images[c]
            if len(pool) < need:
                raise ValueError(
                    f"class {split.class_ids[c]} has {len(pool)} items, needs {need}"
                )
            picks = rng.choice(len(pool), size=need, replace=False)
            images[e, pos_s : pos_s + spec.n_shot] = pool[picks[: spec.n_shot]]
            labels[e, pos_s : pos_s + spec.n_shot] = local
            images[e, pos_q : pos_q + spec.q_query] = pool[picks[spec.n_shot :]]
            labels[e, pos_q : pos_q + spec.q_query] = local
            pos_s += spec.n_shot
            pos_q += spec.q_query
    return EpisodeBatch(images=images, labels=labels, class_map=class_map)


def node_loss(v_light: Tensor, labels: np.ndarray, spec: EpisodeSpec) -> Tensor:
    """Distance-to-support classification loss on query light nodes.

    Per query, class logits are minus the mean L1 distance to that class's
    supports; cross-entropy is averaged over all B*K*Q queries.
    """
    nk = spec.nk
    d = nnops.pairwise_l1(v_light)
    dq = d[:, nk:, :nk]
    h = nnops.one_hot(labels[:, :nk], spec.k_way, dtype=v_light.data.dtype)
    logits = (dq @ h) * (-1.0 / spec.n_shot)
    flat = logits.reshape(spec.batch * spec.k_way * spec.q_query, spec.k_way)
    return nnops.softmax_cross_entropy(flat, labels[:, nk:].reshape(-1))


def edge_loss(e: Tensor, labels: np.ndarray, spec: EpisodeSpec) -> Tensor:
    """Cross-entropy on per-class edge mass from each query to the supports."""
    nk = spec.nk
    h = nnops.one_hot(labels[:, :nk], spec.k_way, dtype=e.data.dtype)
    scores = e[:, nk:, :nk] @ h
    flat = scores.reshape(spec.batch * spec.k_way * spec.q_query, spec.k_way)
    return nnops.softmax_cross_entropy(flat, labels[:, nk:].reshape(-1))


def total_loss(history, labels: np.ndarray, spec: EpisodeSpec,
               weights: LossWeights) -> tuple[Tensor, LossBreakdown]:
    """Gated weighted sum over generations 1..gate of the three components."""
    if weights.gate > len(history) - 1:
        raise ValueError(
            f"loss gate {weights.gate} exceeds {len(history) - 1} generations"
        )
    breakdown = LossBreakdown()
    total = None
    for gen in range(1, weights.gate + 1):
        state = history[gen]
        l_light = edge_loss(state.e_light, labels, spec)
        l_color = edge_loss(state.e_color, labels, spec)
        l_node = node_loss(state.v_light, labels, spec)
        breakdown.light_edge.append(l_light.item())
        breakdown.color_edge.append(l_color.item())
        breakdown.node.append(l_node.item())
        term = (l_light + l_color * weights.lam + l_node * weights.beta) * weights.factor(gen)
        total = term if total is None else total + term
    breakdown.total = total.item()
    return total, breakdown


@dataclass
class Model:
    """Parameter store plus the two architecture configs."""

    store: ParamStore
    labnet_cfg: LabNetConfig
    gnn_cfg: GnnConfig
    norm_mode: str = "scaled"


def build_model(hidden_h: int, embed_dim: int, generations: int, seed: int,
                norm_mode: str = "scaled", dtype=np.float32) -> Model:
    store = ParamStore()
    rng = np.random.default_rng(seed)
    ln_cfg = LabNetConfig(hidden_h=hidden_h, embed_dim=embed_dim)
    gnn_cfg = GnnConfig(embed_dim=embed_dim, generations=generations)
    labnet.init_labnet_params(ln_cfg, store, rng, dtype)
    labgnn.init_gnn_params(gnn_cfg, store, rng, dtype)
    return Model(store=store, labnet_cfg=ln_cfg, gnn_cfg=gnn_cfg, norm_mode=norm_mode)


def forward_episode(model: Model, images: np.ndarray, generations: int | None = None):
    """Color transform, encoder, and graph trajectory for one episode batch."""
    g = model.gnn_cfg.generations if generations is None else generations
    llab = colorspace.rgb_to_llab(images, norm_mode=model.norm_mode).data
    emb = encoder_forward(llab, model.store, model.labnet_cfg)
    return run_generations(emb, g, model.store, model.gnn_cfg), emb


def batch_accuracy(history, batch: EpisodeBatch, spec: EpisodeSpec) -> float:
    _, preds = labgnn.predict(history[-1].e_light, batch.labels[:, : spec.nk], spec.k_way)
    return float((preds == batch.labels[:, spec.nk :]).mean())


def meta_train_step(batch: EpisodeBatch, model: Model, weights: LossWeights,
                    optimizer: Adam, spec: EpisodeSpec) -> LossBreakdown:
    """One forward/backward/Adam update; aborts on a non-finite loss."""
    optimizer.zero_grad()
    history, _ = forward_episode(model, batch.images)
    total, breakdown = total_loss(history, batch.labels, spec, weights)
    if not np.isfinite(breakdown.total):
        raise FloatingPointError(
            f"non-finite loss {breakdown.total}; components "
            f"light={breakdown.light_edge} color={breakdown.color_edge} "
            f"node={breakdown.node}"
        )
    total.backward()
    optimizer.step()
    breakdown.accuracy = batch_accuracy(history, batch, spec)
    return breakdown


def evaluate(split, model: Model, spec: EpisodeSpec, episodes: int,
             rng: np.random.Generator, batch_episodes: int = 4):
    """Mean query accuracy and 95% CI over `episodes` fresh episodes.

    Episodes run in inference mode, grouped `batch_episodes` at a time (batch
    statistics are transductive across the group).  Deterministic given
    (rng state, parameters, split).
    """
    if episodes < 2:
        raise ValueError("need at least 2 episodes for a confidence interval")
    accs = _episode_accuracies(split, model, spec, episodes, rng, batch_episodes)
    return summarize_accuracy(np.asarray(accs))


def summarize_accuracy(accs: np.ndarray) -> tuple[float, float]:
    """(mean, 1.96 * sample std / sqrt(n)) over per-episode accuracies."""
    n = len(accs)
    mean = float(np.mean(accs))
    ci = float(1.96 * np.std(accs, ddof=1) / np.sqrt(n))
    return mean, ci


def _episode_accuracies(split, model: Model, spec: EpisodeSpec, episodes: int,
                        rng: np.random.Generator, batch_episodes: int) -> list[float]:
    accs: list[float] = []
    with no_grad():
        remaining = episodes
        while remaining > 0:
            b = min(batch_episodes, remaining)
            bspec = EpisodeSpec(spec.k_way, spec.n_shot, spec.q_query, batch=b)
            batch = sample_episode(split, bspec, rng)
            history, _ = forward_episode(model, batch.images)
            _, preds = labgnn.predict(history[-1].e_light,
                                      batch.labels[:, : bspec.nk], bspec.k_way)
            accs.extend((preds == batch.labels[:, bspec.nk :]).mean(axis=1).tolist())
            remaining -= b
    return accs


def _eval_chunk(args):
    split, model, spec, episodes, seed_key, batch_episodes = args
    rng = np.random.default_rng(np.random.SeedSequence(seed_key))
    return _episode_accuracies(split, model, spec, episodes, rng, batch_episodes)


def evaluate_parallel(split, model: Model, spec: EpisodeSpec, episodes: int,
                      seed: int, workers: int = 1, batch_episodes: int = 4):
    """evaluate() with the episode budget split across forked workers.

    Deterministic for a given (seed, workers, episodes); worker w draws its
    chunk from an rng seeded by (seed, 3, w).
    """
    if episodes < 2:
        raise ValueError("need at least 2 episodes for a confidence interval")
    per = [episodes // workers + (1 if w < episodes % workers else 0)
           for w in range(workers)]
    jobs = [(split, model, spec, n, [seed, 3, w], batch_episodes)
            for w, n in enumerate(per) if n > 0]
    if workers <= 1:
        chunks = [_eval_chunk(job) for job in jobs]
    else:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(processes=workers) as pool:
            chunks = pool.map(_eval_chunk, jobs)
    accs = [a for chunk in chunks for a in chunk]
    return summarize_accuracy(np.asarray(accs))


@dataclass
class TrainResult:
    best_val_acc: float
    best_val_ci: float
    best_arrays: dict
    iterations_run: int


def train_loop(model: Model, dataset, spec: EpisodeSpec, weights: LossWeights,
               lr: float, iters: int, seed: int, val_every: int = 50,
               val_episodes: int = 50, early_stop_acc: float | None = None,
               eval_batch: int = 4, log=None) -> TrainResult:
    """Meta-train with periodic validation; keeps the best-validation weights."""
    optimizer = Adam(model.store, lr=lr)
    train_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    best_acc, best_ci = -1.0, 0.0
    best_arrays = {k: v.copy() for k, v in model.store.arrays().items()}
    it = 0
    for it in range(1, iters + 1):
        t0 = time.perf_counter()
        batch = sample_episode(dataset.split("train"), spec, train_rng)
        breakdown = meta_train_step(batch, model, weights, optimizer, spec)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        val_acc = val_ci = None
        if it % val_every == 0 or it == iters:
            val_rng = np.random.default_rng(np.random.SeedSequence([seed, 2, it]))
            val_acc, val_ci = evaluate(dataset.split("val"), model, spec,
                                       val_episodes, val_rng, eval_batch)
            if val_acc > best_acc:
                best_acc, best_ci = val_acc, val_ci
                best_arrays = {k: v.copy() for k, v in model.store.arrays().items()}
        if log is not None:
            log(it, breakdown, val_acc, val_ci, wall_ms)
        if early_stop_acc is not None and val_acc is not None and val_acc >= early_stop_acc:
            break
    return TrainResult(best_val_acc=best_acc, best_val_ci=best_ci,
                       best_arrays=best_arrays, iterations_run=it)
