"""The DAGKT network.

Shapes used throughout: ``B`` sequences per batch, ``T`` time steps, ``d`` the
embedding width, ``H`` the top LSTM width.  All per-batch index structures
(recap history, related skills, padding masks) are plain numpy arrays built by
:func:`collate`; only parameters and activations are :class:`Tensor`.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .tensor import ShapeError, Tensor

VARIANTS = ("R", "D", "A", "DA", "G", "full")


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 100
    gcn_layers: int = 3
    gcn_question_neighbors: int = 4
    gcn_skill_neighbors: int = 4
    gcn_activation: str | None = "tanh"
    lstm_layer_sizes: tuple = (200, 100)
    encoder_hidden: int = 100
    recap_count: int = 4
    related_skill_count: int = 3
    dropout_keep: float = 0.8
    use_difficulty: bool = True
    use_attempts: bool = True
    use_similarity_edges: bool = True
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lstm_layer_sizes", tuple(self.lstm_layer_sizes))
        checks = {
            "embed_dim": self.embed_dim >= 1,
            "gcn_layers": self.gcn_layers >= 0,
            "gcn_question_neighbors": self.gcn_question_neighbors >= 1,
            "gcn_skill_neighbors": self.gcn_skill_neighbors >= 1,
            "recap_count": self.recap_count >= 1,
            "related_skill_count": self.related_skill_count >= 1,
            "encoder_hidden": self.encoder_hidden >= 1,
            "lstm_layer_sizes": len(self.lstm_layer_sizes) >= 1 and min(self.lstm_layer_sizes) >= 1,
            "dropout_keep": 0.0 < self.dropout_keep <= 1.0,
            "gcn_activation": self.gcn_activation in (None, "tanh", "relu"),
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"invalid model config field(s): {', '.join(bad)}")
        if self.lstm_layer_sizes[-1] != self.embed_dim:
            raise ValueError(
                f"lstm_layer_sizes: top layer width {self.lstm_layer_sizes[-1]} must equal embed_dim {self.embed_dim}"
            )

    @classmethod
    def for_variant(cls, variant, **overrides):
        """Flags for the ablation variants: R drops everything new, D/A keep only
        difficulty/attempts, DA keeps both, G keeps only the similarity edges."""
        flags = {
            "R": (False, False, False),
            "D": (True, False, False),
            "A": (False, True, False),
            "DA": (True, True, False),
            "G": (False, False, True),
            "full": (True, True, True),
        }
        if variant not in flags:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        d, a, g = flags[variant]
        return cls(**{**overrides, "use_difficulty": d, "use_attempts": a, "use_similarity_edges": g})

    def to_dict(self):
        d = asdict(self)
        d["lstm_layer_sizes"] = list(self.lstm_layer_sizes)
        return d


# ----------------------------------------------------------------------------
# vocabulary: integer ids for questions and KCs

@dataclass
class Vocab:
    questions: list
    kcs: list
    question_kcs: dict  # question id -> tuple of kc ids
    q_index: dict = field(default=None, repr=False)
    k_index: dict = field(default=None, repr=False)

    def __post_init__(self):
        self.q_index = {q: i for i, q in enumerate(self.questions)}
        self.k_index = {k: i for i, k in enumerate(self.kcs)}

    @classmethod
    def from_tags(cls, tags):
        kcs = sorted({k for ks in tags.values() for k in ks})
        return cls(sorted(tags), kcs, {q: tuple(sorted(ks)) for q, ks in tags.items()})

    @property
    def n_nodes(self):
        return len(self.questions) + len(self.kcs)

    def question(self, qid):
        try:
            return self.q_index[qid]
        except KeyError:
            raise KeyError(f"question {qid!r} has no embedding row") from None

    def kc_node(self, kid):
        try:
            return len(self.questions) + self.k_index[kid]
        except KeyError:
            raise KeyError(f"KC {kid!r} has no embedding row") from None

    def to_dict(self):
        return {"questions": self.questions, "kcs": self.kcs,
                "question_kcs": {q: list(k) for q, k in sorted(self.question_kcs.items())}}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["questions"]), list(d["kcs"]), {q: tuple(k) for q, k in d["question_kcs"].items()})


# ----------------------------------------------------------------------------
# parameter containers

def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense:
    def __init__(self, rng, fan_in, fan_out, name):
        self.W = Tensor(_glorot(rng, fan_in, fan_out), requires_grad=True, name=f"{name}.W")
        self.b = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b")

    def __call__(self, x):
        return T.add(T.matmul(x, self.W), self.b)

    def parameters(self):
        return [self.W, self.b]


class ScalarAutoencoder:
    """Encode a scalar in [0, 1] into a ``dim`` vector and decode it back.

    encoder: tanh -> sigmoid -> sigmoid, decoder mirrors it back to a scalar.
    """

    def __init__(self, rng, hidden, dim, name):
        self.enc = [Dense(rng, 1, hidden, f"{name}.enc0"), Dense(rng, hidden, hidden, f"{name}.enc1"),
                    Dense(rng, hidden, dim, f"{name}.enc2")]
        self.dec = [Dense(rng, dim, hidden, f"{name}.dec0"), Dense(rng, hidden, hidden, f"{name}.dec1"),
                    Dense(rng, hidden, 1, f"{name}.dec2")]

    def encode(self, x):
        h = T.tanh(self.enc[0](x))
        h = T.sigmoid(self.enc[1](h))
        return T.sigmoid(self.enc[2](h))

    def decode(self, e):
        h = T.tanh(self.dec[0](e))
        h = T.sigmoid(self.dec[1](h))
        return T.sigmoid(self.dec[2](h))

    def __call__(self, x):
        """``x`` has shape (..., 1); returns (embedding, reconstruction)."""
        values = x.data if isinstance(x, Tensor) else np.asarray(x)
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError(f"encoder input must be normalised to [0, 1], got range "
                             f"[{values.min()}, {values.max()}]")
        e = self.encode(x)
        return e, self.decode(e)

    def parameters(self):
        return [p for layer in self.enc + self.dec for p in layer.parameters()]


class LSTMCell:
    """Gates ordered input, forget, candidate, output in one fused matrix."""

    def __init__(self, rng, n_in, n_hidden, name, forget_bias=1.0):
        self.n_in, self.n_hidden = n_in, n_hidden
        self.Wx = Tensor(_glorot(rng, n_in, 4 * n_hidden), requires_grad=True, name=f"{name}.Wx")
        self.Wh = Tensor(_glorot(rng, n_hidden, 4 * n_hidden), requires_grad=True, name=f"{name}.Wh")
        b = np.zeros(4 * n_hidden)
        b[n_hidden:2 * n_hidden] = forget_bias
        self.b = Tensor(b, requires_grad=True, name=f"{name}.b")

    def project_inputs(self, x):
        return T.add(T.matmul(x, self.Wx), self.b)

    def step(self, xproj, h, c):
        """One step given the already projected input ``x @ Wx + b``."""
        n = self.n_hidden
        z = T.add(xproj, T.matmul(h, self.Wh))
        i = T.sigmoid(z[..., :n])
        f = T.sigmoid(z[..., n:2 * n])
        g = T.tanh(z[..., 2 * n:3 * n])
        o = T.sigmoid(z[..., 3 * n:])
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        h_new = T.mul(o, T.tanh(c_new))
        return h_new, c_new

    def run(self, x):
        """All steps of a (B, T, n_in) input from a zero state at once."""
        return T.lstm_layer(self.project_inputs(x), self.Wh)

    def parameters(self):
        return [self.Wx, self.Wh, self.b]


@dataclass
class HiddenState:
    layers: list  # [(h, c)] per LSTM layer, bottom first

    @classmethod
    def zeros(cls, sizes, batch_shape=()):
        return cls([(Tensor(np.zeros((*batch_shape, n))), Tensor(np.zeros((*batch_shape, n)))) for n in sizes])


# ----------------------------------------------------------------------------
# graph aggregation structure

class NeighborSampler:
    """Row-normalised aggregation matrices for the GCN, one per layer.

    A question's neighbourhood is its KCs plus (optionally) its similar
    questions; a KC's neighbourhood is its questions.  Each node always keeps
    itself.  Neighbour lists longer than the configured caps are subsampled
    without replacement, deterministically in (seed, epoch, layer, node).
    """

    def __init__(self, vocab, graph, config):
        self.vocab, self.config = vocab, config
        nq = len(vocab.questions)
        kc_nbrs = [[] for _ in range(nq)]
        q_nbrs = [[] for _ in range(vocab.n_nodes)]
        edges = set()
        for q, ks in vocab.question_kcs.items():
            edges.update((q, k) for k in ks)
        if graph is not None:
            edges.update(e for e in graph.qk_edges if e[0] in vocab.q_index and e[1] in vocab.k_index)
        for q, k in sorted(edges):
            qi, ki = vocab.question(q), vocab.kc_node(k)
            kc_nbrs[qi].append(ki)
            q_nbrs[ki].append(qi)
        if graph is not None and config.use_similarity_edges:
            for a, b in sorted(graph.qq_edges):
                if a in vocab.q_index and b in vocab.q_index:
                    ia, ib = vocab.question(a), vocab.question(b)
                    q_nbrs[ia].append(ib)
                    q_nbrs[ib].append(ia)
        self.kc_nbrs = [np.array(v, dtype=np.int64) for v in kc_nbrs] + [np.zeros(0, np.int64)] * len(vocab.kcs)
        self.q_nbrs = [np.array(v, dtype=np.int64) for v in q_nbrs]
        self._cache = {}

    def _pick(self, items, cap, key):
        if len(items) <= cap:
            return items
        rng = np.random.default_rng(key)
        return np.sort(rng.choice(items, size=cap, replace=False))

    def matrices(self, epoch):
        """Aggregation matrices for ``epoch`` (``None`` for evaluation)."""
        if epoch in self._cache:
            return self._cache[epoch]
        cfg = self.config
        n = self.vocab.n_nodes
        ep = -1 if epoch is None else int(epoch)
        mats = []
        for layer in range(cfg.gcn_layers):
            rows, cols = [], []
            for node in range(n):
                key = (cfg.seed, ep + 1, layer, node)
                nbrs = np.concatenate([
                    self._pick(self.kc_nbrs[node], cfg.gcn_skill_neighbors, key + (0,)),
                    self._pick(self.q_nbrs[node], cfg.gcn_question_neighbors, key + (1,)),
                ])
                members = np.concatenate([[node], nbrs])
                rows.extend([node] * len(members))
                cols.extend(members.tolist())
            data = np.ones(len(rows))
            A = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
            deg = np.asarray(A.sum(axis=1)).ravel()
            mats.append(sp.diags(1.0 / deg) @ A)
        # keep the evaluation matrices plus the current epoch only
        self._cache = {k: v for k, v in self._cache.items() if k is None}
        self._cache[epoch] = mats
        return mats


def sparse_aggregate(A, x):
    """``A @ x`` for a constant scipy sparse ``A`` and a 2-D tensor ``x``."""
    x = T.as_tensor(x)
    if A.shape[1] != x.shape[0]:
        raise ShapeError(f"sparse_aggregate: incompatible shapes {A.shape} and {x.shape}")
    At = A.T.tocsr()

    def backward(g):
        T._accumulate(x, At @ g)

    return T._result(A @ x.data, (x,), "sparse_aggregate", backward)


# ----------------------------------------------------------------------------
# the graph, fusion, recurrence and prediction stages as free functions

def gcn_propagate(node_table, matrices, layers, activation="tanh", keep_prob=1.0, training=False, rng=None):
    """Run one mean-aggregate/transform/activate round per aggregation matrix.

    ``node_table`` stacks question rows then KC rows.  With no matrices the
    table is returned unchanged.
    """
    h = node_table
    act = {"tanh": T.tanh, "relu": T.relu, None: lambda x: x}[activation]
    for A, dense in zip(matrices, layers):
        h = act(dense(sparse_aggregate(A, h)))
        if training and keep_prob < 1.0:
            h = T.dropout(h, keep_prob, training=True, rng=rng)
    return h


def fuse(layers, q, d, a, m):
    """Exercise embedding from question, difficulty, answer and attempts parts.

    ``layers`` is ``(W1, W2, W3)`` as :class:`Dense`; ``d`` or ``m`` may be
    ``None`` (replaced by zeros).
    """
    dim = q.shape[-1]
    for name, part in (("difficulty", d), ("answer", a), ("attempts", m)):
        if part is not None and part.shape[-1] != dim:
            raise ShapeError(f"fuse: {name} embedding width {part.shape[-1]} != question width {dim}")
    zeros = np.zeros(q.shape)
    d = zeros if d is None else d
    m = zeros if m is None else m
    w1, w2, w3 = layers
    left = w1(T.concat([q, d]))
    right = w2(T.concat([a, m]))
    return T.relu(w3(T.concat([left, right])))


def fuse_plain(layer, q, a):
    """Question/answer concatenation followed by one ReLU layer (the R variant)."""
    if q.shape[-1] != a.shape[-1]:
        raise ShapeError(f"fuse_plain: answer width {a.shape[-1]} != question width {q.shape[-1]}")
    return T.relu(layer(T.concat([q, a])))


def lstm_step(cells, x, state):
    """Advance stacked LSTM cells by one step; returns (top h, new state)."""
    new = []
    inp = x
    for cell, (h, c) in zip(cells, state.layers):
        if inp.shape[-1] != cell.n_in or h.shape[-1] != cell.n_hidden:
            raise ShapeError(f"lstm_step: input {inp.shape} / state {h.shape} do not fit cell "
                             f"({cell.n_in} -> {cell.n_hidden})")
        h, c = cell.step(cell.project_inputs(inp), h, c)
        new.append((h, c))
        inp = h
    return inp, HiddenState(new)


def predict(score_matrix, states, state_mask, targets, target_mask):
    """Attention over state x target interaction terms.

    ``states`` (..., S, H) holds the current state first followed by recap
    history states; ``targets`` (..., E, H) holds the target question
    embedding first followed by related skill embeddings.  Each interaction
    value is the inner product of a state and a target; its attention score is
    the bilinear form ``state @ score_matrix @ target``.  Returns probabilities
    of shape (...).
    """
    targets_t = T.transpose(targets)
    values = T.matmul(states, targets_t)
    scores = T.matmul(T.matmul(states, score_matrix), targets_t)
    lead = values.shape[:-2]
    n_terms = values.shape[-2] * values.shape[-1]
    mask = (np.asarray(state_mask, bool)[..., :, None] & np.asarray(target_mask, bool)[..., None, :])
    mask = mask.reshape(*lead, n_terms)
    attn = T.softmax(T.reshape(scores, (*lead, n_terms)), mask=mask)
    logit = T.sum(T.mul(attn, T.reshape(values, (*lead, n_terms))), axis=-1)
    return T.sigmoid(logit)


# ----------------------------------------------------------------------------

@dataclass
class Batch:
    """Padded index/feature arrays for a group of sequences."""

    questions: np.ndarray      # (B, T) question index
    answers: np.ndarray        # (B, T) 0/1
    difficulty: np.ndarray     # (B, T) in [0, 1]
    attempts: np.ndarray       # (B, T) normalised to [0, 1]
    mask: np.ndarray           # (B, T) valid steps
    recap: np.ndarray          # (B, T-1, R) history time index per prediction
    recap_mask: np.ndarray     # (B, T-1, R)
    skills: np.ndarray         # (B, T-1, K) KC node index of the target
    skill_mask: np.ndarray     # (B, T-1, K)

    @property
    def labels(self):
        return self.answers[:, 1:]

    @property
    def label_mask(self):
        return self.mask[:, 1:]


@dataclass
class EncodedSequence:
    questions: np.ndarray
    answers: np.ndarray
    difficulty: np.ndarray
    attempts: np.ndarray
    recap: list     # per prediction step: history time indices (most recent first)
    skills: list    # per prediction step: KC node indices of the target


def normalize_attempts(m, m_max):
    """``log(1 + m) / log(1 + m_max)`` clipped to [0, 1]."""
    m = np.asarray(m, dtype=float)
    return np.clip(np.log1p(m) / np.log1p(max(m_max, 1)), 0.0, 1.0)


def encode_sequence(records, vocab, difficulty_of, m_max, config):
    q = np.array([vocab.question(r.question_id) for r in records], dtype=np.int64)
    kcsets = [set(vocab.question_kcs.get(r.question_id, r.kc_ids)) for r in records]
    recap, skills = [], []
    for t in range(len(records) - 1):
        target = kcsets[t + 1]
        hist = [j for j in range(t - 1, -1, -1) if kcsets[j] & target][: config.recap_count]
        recap.append(hist)
        ks = sorted(target)[: config.related_skill_count]
        skills.append([vocab.kc_node(k) for k in ks if k in vocab.k_index])
    return EncodedSequence(
        questions=q,
        answers=np.array([r.correct for r in records], dtype=np.int64),
        difficulty=np.array([difficulty_of(r.question_id) for r in records], dtype=float),
        attempts=normalize_attempts([r.attempts for r in records], m_max),
        recap=recap,
        skills=skills,
    )


def collate(encoded, config):
    B = len(encoded)
    Tn = max(len(e.questions) for e in encoded)
    R, K = config.recap_count, config.related_skill_count
    out = Batch(
        questions=np.zeros((B, Tn), np.int64),
        answers=np.zeros((B, Tn), np.int64),
        difficulty=np.zeros((B, Tn)),
        attempts=np.zeros((B, Tn)),
        mask=np.zeros((B, Tn), bool),
        recap=np.zeros((B, Tn - 1, R), np.int64),
        recap_mask=np.zeros((B, Tn - 1, R), bool),
        skills=np.zeros((B, Tn - 1, K), np.int64),
        skill_mask=np.zeros((B, Tn - 1, K), bool),
    )
    for b, e in enumerate(encoded):
        n = len(e.questions)
        out.questions[b, :n] = e.questions
        out.answers[b, :n] = e.answers
        out.difficulty[b, :n] = e.difficulty
        out.attempts[b, :n] = e.attempts
        out.mask[b, :n] = True
        for t, (hist, ks) in enumerate(zip(e.recap, e.skills)):
            out.recap[b, t, :len(hist)] = hist
            out.recap_mask[b, t, :len(hist)] = True
            out.skills[b, t, :len(ks)] = ks
            out.skill_mask[b, t, :len(ks)] = True
    return out


@dataclass
class ForwardResult:
    probs: Tensor                 # (B, T-1) predictions for steps 2..T
    labels: np.ndarray            # (B, T-1)
    mask: np.ndarray              # (B, T-1)
    difficulty: tuple | None      # (targets (B, T), reconstruction Tensor (B, T), mask)
    attempts: tuple | None


class DagktModel:
    def __init__(self, config, vocab, graph=None):
        self.config = config
        self.vocab = vocab
        self.graph_hash = graph.provenance_hash() if graph is not None else None
        self.sampler = NeighborSampler(vocab, graph, config)
        rng = np.random.default_rng(config.seed)
        d, s = config.embed_dim, config.init_scale
        self.question_table = Tensor(rng.normal(0, s, (len(vocab.questions), d)), requires_grad=True,
                                     name="question_table")
        self.kc_table = Tensor(rng.normal(0, s, (len(vocab.kcs), d)), requires_grad=True, name="kc_table")
        self.answer_table = Tensor(rng.normal(0, s, (2, d)), requires_grad=True, name="answer_table")
        self.gcn = [Dense(rng, d, d, f"gcn{i}") for i in range(config.gcn_layers)]
        self.difficulty_ae = ScalarAutoencoder(rng, config.encoder_hidden, d, "difficulty")
        self.attempts_ae = ScalarAutoencoder(rng, config.encoder_hidden, d, "attempts")
        self.fusion = (Dense(rng, 2 * d, d, "fuse_qd"), Dense(rng, 2 * d, d, "fuse_am"),
                       Dense(rng, 2 * d, d, "fuse_out"))
        self.plain_fusion = Dense(rng, 2 * d, d, "fuse_plain")
        sizes = (d,) + config.lstm_layer_sizes
        self.lstm = [LSTMCell(rng, sizes[i], sizes[i + 1], f"lstm{i}") for i in range(len(sizes) - 1)]
        self.score_matrix = Tensor(rng.normal(0, 1.0 / np.sqrt(d), (config.lstm_layer_sizes[-1], d)),
                                   requires_grad=True, name="attention_score")

    @property
    def plain(self):
        return not (self.config.use_difficulty or self.config.use_attempts)

    def named_parameters(self):
        named = {
            "question_table": self.question_table,
            "kc_table": self.kc_table,
            "answer_table": self.answer_table,
            "attention_score": self.score_matrix,
        }
        modules = [*self.gcn, self.difficulty_ae, self.attempts_ae, *self.fusion, self.plain_fusion, *self.lstm]
        for m in modules:
            for p in m.parameters():
                named[p.name] = p
        return named

    def parameters(self):
        """Parameters that take part in the forward pass for this config."""
        skip = set()
        if not self.config.use_difficulty:
            skip.update(p.name for p in self.difficulty_ae.parameters())
        if not self.config.use_attempts:
            skip.update(p.name for p in self.attempts_ae.parameters())
        if self.plain:
            skip.update(p.name for f in self.fusion for p in f.parameters())
        else:
            skip.update(p.name for p in self.plain_fusion.parameters())
        return [p for name, p in self.named_parameters().items() if name not in skip]

    def node_embeddings(self, epoch=None, training=False, rng=None):
        table = T.concat([self.question_table, self.kc_table], axis=0)
        mats = self.sampler.matrices(epoch if training else None)
        return gcn_propagate(table, mats, self.gcn, self.config.gcn_activation,
                             self.config.dropout_keep, training, rng)

    def forward(self, batch, training=False, epoch=0, rng=None):
        cfg = self.config
        nodes = self.node_embeddings(epoch, training, rng)
        q = T.embedding_lookup(nodes, batch.questions)                    # (B, T, d)
        a = T.embedding_lookup(self.answer_table, batch.answers)          # (B, T, d)

        diff = att = None
        d_emb = m_emb = None
        if cfg.use_difficulty:
            d_emb, d_rec = self.difficulty_ae(batch.difficulty[..., None])
            diff = (batch.difficulty, T.reshape(d_rec, batch.difficulty.shape), batch.mask)
        if cfg.use_attempts:
            m_emb, m_rec = self.attempts_ae(batch.attempts[..., None])
            att = (batch.attempts, T.reshape(m_rec, batch.attempts.shape), batch.mask)
        x = fuse_plain(self.plain_fusion, q, a) if self.plain else fuse(self.fusion, q, d_emb, a, m_emb)

        B, Tn = batch.questions.shape
        # the last step's state is never used for a prediction
        layer_input = x[:, :Tn - 1]
        for cell in self.lstm:
            layer_input = cell.run(layer_input)
        outputs = layer_input                                             # (B, T-1, H)

        H = outputs                                                       # (B, T-1, H)
        Tp = Tn - 1
        bidx = np.arange(B)[:, None, None]
        hist = T.take(H, (bidx, batch.recap))                             # (B, T-1, R, H)
        states = T.concat([T.reshape(H, (B, Tp, 1, H.shape[-1])), hist], axis=2)
        state_mask = np.concatenate([np.ones((B, Tp, 1), bool), batch.recap_mask], axis=2)

        target_q = T.embedding_lookup(nodes, batch.questions[:, 1:])      # (B, T-1, d)
        target_k = T.embedding_lookup(nodes, batch.skills)                # (B, T-1, K, d)
        targets = T.concat([T.reshape(target_q, (B, Tp, 1, cfg.embed_dim)), target_k], axis=2)
        target_mask = np.concatenate([np.ones((B, Tp, 1), bool), batch.skill_mask], axis=2)

        probs = predict(self.score_matrix, states, state_mask, targets, target_mask)
        return ForwardResult(probs, batch.labels, batch.label_mask, diff, att)

    # ------------------------------------------------------------------
    # checkpoints

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, arrays):
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ShapeError(f"checkpoint {name}: shape {arrays[name].shape} != {p.shape}")
            p.data[...] = arrays[name]

    def fingerprint(self):
        h = hashlib.sha256()
        for name, arr in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(arr.tobytes())
        return h.hexdigest()


def config_from_json(text):
    return ModelConfig(**json.loads(text))
