"""A tiny next-token model with hand-written backprop.

Architecture: token embedding -> fc1 -> tanh -> fc2 -> output head (tied to
the embedding by default). The two ``fc`` layers are the linear layers whose
inputs ``X`` and output gradients ``G`` feed the curvature estimates.

Every position is predicted from its own token only, so a corpus reduces to
a bag of ``(input, target)`` pairs and all passes are batched over them.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .covariance import CovarianceAccumulator
from .errors import ConfigError, DimensionError

LINEAR_LAYERS = ("fc1", "fc2")


@dataclass(frozen=True, eq=False)
class ToyModel:
    embedding: np.ndarray  # V x d
    fc1: np.ndarray  # h x d
    fc2: np.ndarray  # d x h
    head: np.ndarray | None = None  # V x d, None when tied to the embedding

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden(self) -> int:
        return self.fc1.shape[0]

    @property
    def tied(self) -> bool:
        return self.head is None

    @property
    def output_head(self) -> np.ndarray:
        return self.embedding if self.head is None else self.head

    def with_weights(self, **weights: np.ndarray) -> "ToyModel":
        for name, w in weights.items():
            if getattr(self, name).shape != w.shape:
                raise DimensionError(f"{name} expects shape {getattr(self, name).shape}, got {w.shape}")
        return dataclasses.replace(self, **weights)

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"embedding": self.embedding, "fc1": self.fc1, "fc2": self.fc2}
        if self.head is not None:
            params["head"] = self.head
        return params


def init_model(vocab_size: int, embed_dim: int, hidden: int, seed: int, tied: bool = True) -> ToyModel:
    rng = np.random.default_rng(seed)
    emb = rng.standard_normal((vocab_size, embed_dim)) / np.sqrt(embed_dim)
    fc1 = rng.standard_normal((hidden, embed_dim)) / np.sqrt(embed_dim)
    fc2 = rng.standard_normal((embed_dim, hidden)) / np.sqrt(hidden)
    head = None if tied else rng.standard_normal((vocab_size, embed_dim)) / np.sqrt(embed_dim)
    return ToyModel(emb, fc1, fc2, head)


@dataclass(frozen=True, eq=False)
class SyntheticCorpus:
    """Sequences sampled from a seeded order-1 Markov chain over ``vocab_size`` symbols.

    Small ``concentration`` gives peaked transition rows and hence strongly
    non-isotropic activation statistics. ``seed`` fixes the chain;
    ``sample_seed`` (default: ``seed``) fixes the sampled sequences, so a
    held-out split shares the chain but not the samples.
    """

    vocab_size: int
    seq_len: int
    num_sequences: int
    seed: int
    concentration: float = 0.3
    sample_seed: int | None = None
    sequences: np.ndarray = field(init=False)
    transitions: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.vocab_size < 2 or self.seq_len < 1 or self.num_sequences < 0:
            raise ConfigError("corpus needs vocab_size >= 2, seq_len >= 1, num_sequences >= 0")
        rng = np.random.default_rng(self.seed)
        trans = rng.dirichlet(np.full(self.vocab_size, self.concentration), size=self.vocab_size)
        if self.sample_seed is not None:
            rng = np.random.default_rng([self.seed, self.sample_seed])
        seqs = np.empty((self.num_sequences, self.seq_len), dtype=np.int64)
        cdf = np.cumsum(trans, axis=1)
        cdf[:, -1] = 1.0
        if self.num_sequences:
            seqs[:, 0] = rng.integers(0, self.vocab_size, self.num_sequences)
            for t in range(1, self.seq_len):
                u = rng.random(self.num_sequences)
                rows = cdf[seqs[:, t - 1]]
                seqs[:, t] = (u[:, None] > rows).sum(axis=1)
        object.__setattr__(self, "transitions", trans)
        object.__setattr__(self, "sequences", seqs)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All ``(input, target)`` token pairs, flattened in sequence order."""
        return self.sequences[:, :-1].reshape(-1), self.sequences[:, 1:].reshape(-1)

    def split(self, sample_seed: int, num_sequences: int | None = None) -> "SyntheticCorpus":
        """Fresh samples from the same chain."""
        return SyntheticCorpus(
            self.vocab_size,
            self.seq_len,
            self.num_sequences if num_sequences is None else num_sequences,
            self.seed,
            self.concentration,
            sample_seed,
        )


@dataclass(eq=False)
class BackwardResult:
    loss: float  # summed over predicted positions
    grads: dict[str, np.ndarray]  # parameter gradients
    activation_grads: dict[str, np.ndarray]  # dL/d(y1), dL/d(y2), dL/d(logits); tokens x width
    captures: dict[str, tuple[np.ndarray, np.ndarray]]  # layer -> (X: n x t, G: m x t)
    count: int  # number of predicted positions


def _check_tokens(model: ToyModel, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= model.vocab_size):
        raise DimensionError(f"token ids must lie in [0, {model.vocab_size})")
    return tokens


def _hidden(model: ToyModel, tokens: np.ndarray):
    e = model.embedding[tokens]
    y1 = e @ model.fc1.T
    a1 = np.tanh(y1)
    y2 = a1 @ model.fc2.T
    return e, y1, a1, y2


def forward(model: ToyModel, sequence) -> np.ndarray:
    """Logits (T x V) for every position of ``sequence``."""
    tokens = _check_tokens(model, sequence)
    *_, y2 = _hidden(model, tokens)
    return y2 @ model.output_head.T


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def pairs_loss_and_backward(
    model: ToyModel, inputs, targets, temperature: float = 1.0
) -> BackwardResult:
    """Summed cross-entropy of ``softmax(logits / temperature)`` and its gradients."""
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    inputs = _check_tokens(model, inputs)
    targets = _check_tokens(model, targets)
    if inputs.shape != targets.shape:
        raise DimensionError("inputs and targets differ in length")
    t = inputs.size
    e, y1, a1, y2 = _hidden(model, inputs)
    head = model.output_head
    logits = y2 @ head.T
    logp = _log_softmax(logits / temperature)
    rows = np.arange(t)
    loss = float(-logp[rows, targets].sum())

    dz = np.exp(logp)
    dz[rows, targets] -= 1.0
    dz /= temperature
    dy2 = dz @ head
    d_head = dz.T @ y2
    d_fc2 = dy2.T @ a1
    dy1 = (dy2 @ model.fc2) * (1.0 - a1 * a1)
    d_fc1 = dy1.T @ e
    d_emb = np.zeros_like(model.embedding)
    np.add.at(d_emb, inputs, dy1 @ model.fc1)
    grads = {"fc1": d_fc1, "fc2": d_fc2}
    if model.tied:
        grads["embedding"] = d_emb + d_head
    else:
        grads["embedding"] = d_emb
        grads["head"] = d_head
    return BackwardResult(
        loss=loss,
        grads=grads,
        activation_grads={"y1": dy1, "y2": dy2, "logits": dz},
        captures={"fc1": (e.T.copy(), dy1.T.copy()), "fc2": (a1.T.copy(), dy2.T.copy())},
        count=t,
    )


def loss_and_backward(model: ToyModel, sequence, temperature: float = 1.0) -> BackwardResult:
    """Next-token loss over positions ``1..T-1`` of one sequence, with traces.

    ``captures[layer]`` holds the layer input ``X`` and the gradient ``G`` of
    the loss with respect to the layer output, one column per predicted token.
    """
    tokens = _check_tokens(model, sequence)
    return pairs_loss_and_backward(model, tokens[:-1], tokens[1:], temperature)


def evaluate_mean_loss(model: ToyModel, corpus: SyntheticCorpus, temperature: float = 1.0) -> float:
    """Mean per-token next-token loss over the corpus."""
    inputs, targets = corpus.pairs()
    if inputs.size == 0:
        raise ConfigError("corpus has no predicted positions")
    inputs = _check_tokens(model, inputs)
    *_, y2 = _hidden(model, inputs)
    logp = _log_softmax((y2 @ model.output_head.T) / temperature)
    return float(-logp[np.arange(inputs.size), targets].mean())


def perplexity(mean_loss: float) -> float:
    return float(np.exp(mean_loss))


@dataclass(eq=False)
class TraceBundle:
    x: dict[str, np.ndarray]  # layer -> n x t
    g: dict[str, np.ndarray]  # layer -> m x t
    tokens: int


def layer_dims(model: ToyModel) -> dict[str, tuple[int, int]]:
    """``(m, n)`` of each linear layer."""
    return {name: getattr(model, name).shape for name in LINEAR_LAYERS}


def collect_traces(
    model: ToyModel,
    corpus: SyntheticCorpus,
    temperature: float = 1.0,
    track_xg: bool = False,
    keep_traces: bool = True,
) -> tuple[TraceBundle, dict[str, CovarianceAccumulator]]:
    """Stream every sequence through the model and accumulate per-layer statistics."""
    if corpus.num_sequences == 0 or corpus.seq_len < 2:
        raise ConfigError("corpus is empty: need at least one sequence of length >= 2")
    accs = {
        name: CovarianceAccumulator(name, n=n, m=m, track_xg=track_xg)
        for name, (m, n) in layer_dims(model).items()
    }
    xs: dict[str, list] = {name: [] for name in LINEAR_LAYERS}
    gs: dict[str, list] = {name: [] for name in LINEAR_LAYERS}
    tokens = 0
    for seq in corpus.sequences:
        res = loss_and_backward(model, seq, temperature)
        tokens += res.count
        for name, (x, g) in res.captures.items():
            accs[name].accumulate(x, g)
            if keep_traces:
                xs[name].append(x)
                gs[name].append(g)
    if keep_traces:
        bundle = TraceBundle(
            {k: np.concatenate(v, axis=1) for k, v in xs.items()},
            {k: np.concatenate(v, axis=1) for k, v in gs.items()},
            tokens,
        )
    else:
        bundle = TraceBundle({}, {}, tokens)
    return bundle, accs


def fit(
    model: ToyModel,
    corpus: SyntheticCorpus,
    steps: int = 300,
    lr: float = 0.05,
    betas: tuple[float, float] = (0.9, 0.999),
) -> ToyModel:
    """Full-batch Adam on the mean next-token loss.

    Brings the model close to a stationary point, where the loss change of a
    small weight perturbation is dominated by the curvature term.
    """
    inputs, targets = corpus.pairs()
    params = {k: v.copy() for k, v in model.parameters().items()}
    m1 = {k: np.zeros_like(v) for k, v in params.items()}
    m2 = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2 = betas
    for step in range(1, steps + 1):
        cur = dataclasses.replace(model, **params)
        res = pairs_loss_and_backward(cur, inputs, targets)
        for k, g in res.grads.items():
            g = g / res.count
            m1[k] = b1 * m1[k] + (1 - b1) * g
            m2[k] = b2 * m2[k] + (1 - b2) * g * g
            mhat = m1[k] / (1 - b1**step)
            vhat = m2[k] / (1 - b2**step)
            params[k] = params[k] - lr * mhat / (np.sqrt(vhat) + 1e-8)
    return dataclasses.replace(model, **params)


def quantize_rtn(w: np.ndarray, bits: int, per_channel: bool = True) -> np.ndarray:
    """Symmetric round-to-nearest quantization with power-of-two step sizes.

    The step is the smallest power of two that keeps ``max|w|`` within
    ``2**(bits-1) - 1`` levels, per output row when ``per_channel``.
    """
    if bits < 2:
        raise ConfigError(f"bits must be >= 2, got {bits}")
    w = np.asarray(w, dtype=np.float64)
    qmax = 2 ** (bits - 1) - 1
    step = quantization_step(w, bits, per_channel)
    return np.clip(np.round(w / step), -qmax, qmax) * step


def quantization_step(w: np.ndarray, bits: int, per_channel: bool = True) -> np.ndarray:
    """Per-row step size used by ``quantize_rtn`` (column vector)."""
    w = np.asarray(w, dtype=np.float64)
    qmax = 2 ** (bits - 1) - 1
    absmax = np.abs(w).max(axis=1, keepdims=True) if per_channel else np.full((w.shape[0], 1), np.abs(w).max(initial=0.0))
    safe = np.where(absmax > 0, absmax, 1.0)
    return np.where(absmax > 0, np.exp2(np.ceil(np.log2(safe / qmax))), 1.0)


def prune_24(w: np.ndarray) -> np.ndarray:
    """Zero the two smallest-magnitude entries of every group of four inputs.

    Ties go to the lower index. A trailing group of k < 4 columns loses
    ``k // 2`` entries.
    """
    w = np.asarray(w, dtype=np.float64)
    out = w.copy()
    n = w.shape[1]
    for start in range(0, n, 4):
        block = out[:, start : start + 4]
        drop = block.shape[1] // 2
        order = np.argsort(np.abs(block), axis=1, kind="stable")[:, :drop]
        np.put_along_axis(block, order, 0.0, axis=1)
    return out
