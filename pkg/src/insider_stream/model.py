"""DNN and LSTM encoders with Gaussian/softmax parameter heads, forward and backward.

All weights are shared across users; per-user context (LSTM hidden and cell
states, input windows) lives in the trainer's state store. Gradients are
hand-derived and guarded by ``numerics.gradient_check``.

Shapes: weights are ``(out, in)`` and activations are row-batched, so a layer
computes ``x @ W.T + b``.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import warnings
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from insider_stream.density import (
    LOG_VAR_BOUND,
    MAX_CATEGORICAL_NLL,
    DistributionParams,
    categorical_nll_from_logprobs,
    gaussian_terms,
)
from insider_stream.numerics import ShapeError, log_softmax, sigmoid

ENCODERS = ("dnn", "lstm")
TARGET_MODES = ("same", "next")
COVARIANCES = ("identity", "diag")
LSTM_GATES = ("g", "f", "i", "o")

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass
class ModelConfig:
    count_dim: int
    categoricals: tuple = ()  # ((name, registered cardinality), ...)
    encoder: str = "dnn"
    layers: int = 1
    hidden_dim: int = 100
    head_hidden: int | None = None
    target_mode: str = "same"
    covariance: str = "diag"
    include_categoricals: bool = False
    embedding_ratio: float = 0.5
    bptt_window: int = 10
    batch_size: int = 256
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        self.categoricals = tuple((str(n), int(c)) for n, c in self.categoricals)
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}")
        if self.target_mode not in TARGET_MODES:
            raise ValueError(f"target_mode must be one of {TARGET_MODES}")
        if self.covariance not in COVARIANCES:
            raise ValueError(f"covariance must be one of {COVARIANCES}")
        if self.count_dim < 1 or self.layers < 1 or self.hidden_dim < 1 or self.batch_size < 1:
            raise ValueError("count_dim, layers, hidden_dim and batch_size must be positive")
        if self.include_categoricals and not self.categoricals:
            raise ValueError("include_categoricals needs categorical specs")
        ranges = {
            "layers": (1, 6),
            "hidden_dim": (20, 500),
            "embedding_ratio": (0.25, 1.0),
            "bptt_window": (3, 40),
        }
        for name, (lo, hi) in ranges.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                warnings.warn(f"{name}={v} outside tuning range [{lo}, {hi}]", stacklevel=3)

    @property
    def head_width(self):
        return self.head_hidden or self.hidden_dim

    def to_dict(self):
        d = asdict(self)
        d["categoricals"] = [list(c) for c in self.categoricals]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["categoricals"] = tuple(tuple(c) for c in d.get("categoricals", ()))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return cls(**d)


@dataclass
class SampleGroup:
    """Samples sharing one input sequence length ``T``.

    For the DNN ``T`` is 1 (or 0, meaning an all-zero input vector). For the
    LSTM the sequence is run from the boundary states ``h0``/``c0`` (treated as
    constants) and the distribution is read from the last hidden state; with
    ``T == 0`` it is read from ``h0`` directly.
    """

    counts_seq: np.ndarray  # (B, T, count_dim) float64
    cats_seq: np.ndarray  # (B, T, n_cat) int64
    target_counts: np.ndarray  # (B, count_dim)
    target_cats: np.ndarray  # (B, n_cat)
    h0: np.ndarray | None = None  # (L, B, H)
    c0: np.ndarray | None = None

    @property
    def size(self):
        return self.target_counts.shape[0]


@dataclass
class GroupResult:
    nll: np.ndarray  # (B,) total anomaly per sample
    count_nll: np.ndarray  # (B,)
    cat_nll: np.ndarray  # (B, n_cat); empty when categoricals are off
    mu: np.ndarray
    log_var: np.ndarray | None
    cat_probs: list
    grads: dict | None = None  # gradient of the batch SUM of nll

    def distribution(self, i):
        return DistributionParams(
            mu=self.mu[i],
            log_var=None if self.log_var is None else self.log_var[i],
            categorical_probs=None if not self.cat_probs else [p[i] for p in self.cat_probs],
        )


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Model:
    def __init__(self, config: ModelConfig, params: dict | None = None):
        self.config = config
        cfg = config
        self.cat_names = tuple(n for n, _ in cfg.categoricals) if cfg.include_categoricals else ()
        self.cat_cards = tuple(c for _, c in cfg.categoricals) if cfg.include_categoricals else ()
        # one extra class per category for the UNKNOWN id
        self.n_classes = tuple(c + 1 for c in self.cat_cards)
        self.embed_widths = tuple(
            embedding_width(c, cfg.embedding_ratio) for c in self.cat_cards
        )
        self.input_dim = cfg.count_dim + sum(self.embed_widths)
        self.params = params if params is not None else self.init_params(cfg.seed)
        self._check_params()

    # ------------------------------------------------------------------ params
    def param_shapes(self):
        cfg = self.config
        H, K, d = cfg.hidden_dim, cfg.head_width, cfg.count_dim
        shapes = {}
        for l in range(1, cfg.layers + 1):
            fan_in = self.input_dim if l == 1 else H
            if cfg.encoder == "dnn":
                shapes[f"dnn{l}.W"] = (H, fan_in)
                shapes[f"dnn{l}.b"] = (H,)
            else:
                for gate in LSTM_GATES:
                    shapes[f"lstm{l}.W_{gate}x"] = (H, fan_in)
                    shapes[f"lstm{l}.W_{gate}h"] = (H, H)
                    shapes[f"lstm{l}.b_{gate}"] = (H,)
        shapes["head_counts.U"] = (K, H)
        shapes["head_counts.b"] = (K,)
        shapes["head_counts.U2"] = (d, K)
        shapes["head_counts.b2"] = (d,)
        if cfg.covariance == "diag":
            shapes["head_counts.Uv"] = (d, K)
            shapes["head_counts.bv"] = (d,)
        for name, n, w in zip(self.cat_names, self.n_classes, self.embed_widths):
            shapes[f"head_{name}.U"] = (K, H)
            shapes[f"head_{name}.b"] = (K,)
            shapes[f"head_{name}.U2"] = (n, K)
            shapes[f"head_{name}.b2"] = (n,)
            shapes[f"embed_{name}"] = (n, w)
        return shapes

    def init_params(self, seed):
        """Weights uniform in +-1/sqrt(fan_in), biases zero."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in self.param_shapes().items():
            if len(shape) == 1:
                params[name] = np.zeros(shape)
            elif name.startswith("embed_"):
                params[name] = _uniform(rng, shape, shape[0])
            else:
                params[name] = _uniform(rng, shape, shape[1])
        return params

    def _check_params(self):
        shapes = self.param_shapes()
        if set(shapes) != set(self.params):
            raise ShapeError(
                f"parameter blocks differ: missing {sorted(set(shapes) - set(self.params))}, "
                f"extra {sorted(set(self.params) - set(shapes))}"
            )
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.params[name].shape} != {shape}")

    def zero_state(self, batch):
        L, H = self.config.layers, self.config.hidden_dim
        return np.zeros((L, batch, H)), np.zeros((L, batch, H))

    # ------------------------------------------------------------------ inputs
    def embed_categoricals(self, cats):
        """Concatenated embedding rows for an ``(N, n_cat)`` id array."""
        cats = np.asarray(cats, dtype=np.int64)
        parts = []
        for k, (name, n) in enumerate(zip(self.cat_names, self.n_classes)):
            ids = cats[:, k]
            if np.any(ids < 0) or np.any(ids >= n):
                raise IndexError(f"{name} id out of range [0, {n})")
            parts.append(self.params[f"embed_{name}"][ids])
        if not parts:
            return np.zeros((cats.shape[0], 0))
        return np.concatenate(parts, axis=1)

    def encoder_input(self, counts, cats):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.shape[-1] != self.config.count_dim:
            raise ShapeError(f"count width {counts.shape[-1]} != {self.config.count_dim}")
        if not self.cat_names:
            return counts
        return np.concatenate([counts, self.embed_categoricals(cats)], axis=1)

    def _embed_backward(self, cats, d_input, grads):
        off = self.config.count_dim
        for k, (name, w) in enumerate(zip(self.cat_names, self.embed_widths)):
            g = np.zeros_like(self.params[f"embed_{name}"])
            np.add.at(g, cats[:, k], d_input[:, off:off + w])
            grads[f"embed_{name}"] = grads.get(f"embed_{name}", 0) + g
            off += w

    # ------------------------------------------------------------------ DNN
    def dnn_forward(self, x):
        """Stacked tanh layers; returns ``(h_L, cache)``."""
        p = self.params
        inp = np.asarray(x, dtype=np.float64)
        if inp.shape[-1] != self.input_dim:
            raise ShapeError(f"input width {inp.shape[-1]} != {self.input_dim}")
        cache = []
        for l in range(1, self.config.layers + 1):
            h = np.tanh(inp @ p[f"dnn{l}.W"].T + p[f"dnn{l}.b"])
            cache.append((inp, h))
            inp = h
        return inp, cache

    def dnn_backward(self, cache, dh):
        p = self.params
        grads = {}
        for l in range(self.config.layers, 0, -1):
            inp, h = cache[l - 1]
            da = dh * (1.0 - h * h)
            grads[f"dnn{l}.W"] = da.T @ inp
            grads[f"dnn{l}.b"] = da.sum(axis=0)
            dh = da @ p[f"dnn{l}.W"]
        return grads, dh

    # ------------------------------------------------------------------ LSTM
    def _lstm_stack(self, l):
        p = self.params
        pre = f"lstm{l}."
        wx = np.concatenate([p[f"{pre}W_{g}x"] for g in LSTM_GATES])
        wh = np.concatenate([p[f"{pre}W_{g}h"] for g in LSTM_GATES])
        b = np.concatenate([p[f"{pre}b_{g}"] for g in LSTM_GATES])
        return wx, wh, b

    def lstm_forward(self, x_seq, h0, c0, keep_cache=True):
        """Run ``(B, T, input_dim)`` from states ``(L, B, H)``.

        Returns ``(h_top, (h, c), cache)`` where ``h, c`` are the final states.
        """
        L, H = self.config.layers, self.config.hidden_dim
        B, T, D = x_seq.shape
        if D != self.input_dim:
            raise ShapeError(f"input width {D} != {self.input_dim}")
        stacks = [self._lstm_stack(l) for l in range(1, L + 1)]
        h = [h0[l] for l in range(L)]
        c = [c0[l] for l in range(L)]
        steps = []
        for t in range(T):
            inp = x_seq[:, t, :]
            layer_cache = []
            for l in range(L):
                wx, wh, b = stacks[l]
                z = inp @ wx.T + h[l] @ wh.T + b
                g = np.tanh(z[:, :H])
                fio = sigmoid(z[:, H:])
                f = fio[:, :H]
                i = fio[:, H:2 * H]
                o = fio[:, 2 * H:]
                c_new = f * c[l] + i * g
                tc = np.tanh(c_new)
                h_new = o * tc
                if keep_cache:
                    layer_cache.append((inp, h[l], c[l], g, f, i, o, tc))
                h[l], c[l] = h_new, c_new
                inp = h_new
            steps.append(layer_cache)
        h_top = h[L - 1] if T else h0[L - 1]
        return h_top, (np.stack(h), np.stack(c)), (steps, stacks)

    def lstm_step(self, x, h0, c0):
        """One time step for a batch ``(B, input_dim)``; returns ``(h_top, h, c)``."""
        h_top, (h, c), _ = self.lstm_forward(x[:, None, :], h0, c0, keep_cache=False)
        return h_top, h, c

    def lstm_backward(self, cache, dh_top):
        """BPTT from a loss on the last step's top hidden state. States at t=0 are constants."""
        steps, stacks = cache
        L, H = self.config.layers, self.config.hidden_dim
        T = len(steps)
        B = dh_top.shape[0]
        dwx = [np.zeros_like(s[0]) for s in stacks]
        dwh = [np.zeros_like(s[1]) for s in stacks]
        db = [np.zeros_like(s[2]) for s in stacks]
        dh_next = [np.zeros((B, H)) for _ in range(L)]
        dc_next = [np.zeros((B, H)) for _ in range(L)]
        dx = np.zeros((B, T, self.input_dim))
        for t in range(T - 1, -1, -1):
            d_above = dh_top if t == T - 1 else 0.0
            for l in range(L - 1, -1, -1):
                inp, h_prev, c_prev, g, f, i, o, tc = steps[t][l]
                wx, wh, _ = stacks[l]
                dh = dh_next[l] + d_above
                dc = dc_next[l] + dh * o * (1.0 - tc * tc)
                dz = np.concatenate([
                    dc * i * (1.0 - g * g),
                    dc * c_prev * f * (1.0 - f),
                    dc * g * i * (1.0 - i),
                    dh * tc * o * (1.0 - o),
                ], axis=1)
                dc_next[l] = dc * f
                dwx[l] += dz.T @ inp
                dwh[l] += dz.T @ h_prev
                db[l] += dz.sum(axis=0)
                dh_next[l] = dz @ wh
                d_above = dz @ wx
            dx[:, t, :] = d_above
        grads = {}
        for l in range(L):
            pre = f"lstm{l + 1}."
            for k, gate in enumerate(LSTM_GATES):
                sl = slice(k * H, (k + 1) * H)
                grads[f"{pre}W_{gate}x"] = dwx[l][sl]
                grads[f"{pre}W_{gate}h"] = dwh[l][sl]
                grads[f"{pre}b_{gate}"] = db[l][sl]
        return grads, dx

    # ------------------------------------------------------------------ heads
    def heads(self, h):
        """Distribution parameters for hidden states ``(B, H)``; returns ``(outputs, cache)``."""
        p = self.params
        z = np.tanh(h @ p["head_counts.U"].T + p["head_counts.b"])
        mu = z @ p["head_counts.U2"].T + p["head_counts.b2"]
        log_var = lv_raw = None
        if self.config.covariance == "diag":
            lv_raw = z @ p["head_counts.Uv"].T + p["head_counts.bv"]
            log_var = bound_log_var(lv_raw)
        cat_z, cat_logp = [], []
        for name in self.cat_names:
            zv = np.tanh(h @ p[f"head_{name}.U"].T + p[f"head_{name}.b"])
            cat_z.append(zv)
            cat_logp.append(log_softmax(zv @ p[f"head_{name}.U2"].T + p[f"head_{name}.b2"]))
        out = {"mu": mu, "log_var": log_var, "cat_logp": cat_logp}
        return out, (h, z, lv_raw, cat_z)

    def heads_backward(self, cache, out, target_counts, target_cats):
        """Gradients of the summed NLL w.r.t. head params and ``h``."""
        p = self.params
        h, z, lv_raw, cat_z = cache
        r = target_counts - out["mu"]
        grads = {}
        if out["log_var"] is None:
            dmu = -r
            dz = dmu @ p["head_counts.U2"]
        else:
            inv = np.exp(-out["log_var"])
            dmu = -r * inv
            t = out["log_var"] / LOG_VAR_BOUND
            dlv = 0.5 * (1.0 - r * r * inv) * (1.0 - t * t)
            dz = dmu @ p["head_counts.U2"] + dlv @ p["head_counts.Uv"]
            grads["head_counts.Uv"] = dlv.T @ z
            grads["head_counts.bv"] = dlv.sum(axis=0)
        grads["head_counts.U2"] = dmu.T @ z
        grads["head_counts.b2"] = dmu.sum(axis=0)
        da = dz * (1.0 - z * z)
        grads["head_counts.U"] = da.T @ h
        grads["head_counts.b"] = da.sum(axis=0)
        dh = da @ p["head_counts.U"]
        rows = np.arange(h.shape[0])
        for k, name in enumerate(self.cat_names):
            logp = out["cat_logp"][k]
            ids = target_cats[:, k]
            dlogits = np.exp(logp)
            dlogits[rows, ids] -= 1.0
            # the probability floor makes the loss flat there
            dlogits[-logp[rows, ids] >= MAX_CATEGORICAL_NLL] = 0.0
            zv = cat_z[k]
            grads[f"head_{name}.U2"] = dlogits.T @ zv
            grads[f"head_{name}.b2"] = dlogits.sum(axis=0)
            dzv = (dlogits @ p[f"head_{name}.U2"]) * (1.0 - zv * zv)
            grads[f"head_{name}.U"] = dzv.T @ h
            grads[f"head_{name}.b"] = dzv.sum(axis=0)
            dh = dh + dzv @ p[f"head_{name}.U"]
        return grads, dh

    # ------------------------------------------------------------------ full pass
    def forward_backward(self, group: SampleGroup, grad=True) -> GroupResult:
        cfg = self.config
        B, T = group.counts_seq.shape[:2]
        target = np.asarray(group.target_counts, dtype=np.float64)
        tcats = np.asarray(group.target_cats, dtype=np.int64).reshape(B, -1)
        n_cat = len(self.cat_names)

        flat_cats = None
        if T:
            flat_counts = group.counts_seq.reshape(B * T, -1)
            flat_cats = np.asarray(group.cats_seq, dtype=np.int64).reshape(B * T, -1)
            x = self.encoder_input(flat_counts, flat_cats[:, :n_cat]).reshape(B, T, -1)
        else:
            x = np.zeros((B, 0, self.input_dim))

        if cfg.encoder == "dnn":
            if T > 1:
                raise ShapeError("DNN samples take at most one input step")
            x_in = x[:, 0, :] if T else np.zeros((B, self.input_dim))
            h, enc_cache = self.dnn_forward(x_in)
        else:
            h0, c0 = group.h0, group.c0
            if h0 is None:
                h0, c0 = self.zero_state(B)
            h, _, enc_cache = self.lstm_forward(x, h0, c0, keep_cache=grad)

        out, head_cache = self.heads(h)
        terms = gaussian_terms(target, out["mu"], out["log_var"])
        count_nll = terms.sum(axis=1)
        if n_cat:
            cat_nll = np.stack([categorical_nll_from_logprobs(out["cat_logp"][k], tcats[:, k])
                                for k in range(n_cat)], axis=1)
            nll = count_nll + cat_nll.sum(axis=1)
        else:
            cat_nll = np.zeros((B, 0))
            nll = count_nll
        result = GroupResult(nll, count_nll, cat_nll, out["mu"], out["log_var"],
                             [np.exp(lp) for lp in out["cat_logp"]])
        if not grad:
            return result

        grads, dh = self.heads_backward(head_cache, out, target, tcats)
        if cfg.encoder == "dnn":
            enc_grads, dx = self.dnn_backward(enc_cache, dh)
            dx = dx[:, None, :] if T else None
        else:
            enc_grads, dx = self.lstm_backward(enc_cache, dh)
        grads.update(enc_grads)
        if n_cat:
            if T:
                self._embed_backward(flat_cats, dx.reshape(B * T, -1), grads)
            for name in self.cat_names:
                grads.setdefault(f"embed_{name}", np.zeros_like(self.params[f"embed_{name}"]))
        result.grads = grads
        return result

    def batch_loss(self, groups, grad=True):
        """Mean NLL over all samples in ``groups`` and its gradient."""
        total = 0.0
        n = 0
        grads = {name: np.zeros_like(v) for name, v in self.params.items()} if grad else None
        for g in groups:
            res = self.forward_backward(g, grad=grad)
            total += float(res.nll.sum())
            n += g.size
            if grad:
                for name, v in res.grads.items():
                    grads[name] += v
        if n == 0:
            return 0.0, grads
        if grad:
            for v in grads.values():
                v /= n
        return total / n, grads

    # ------------------------------------------------------------------ persistence
    def save(self, path):
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        meta = {"kind": "model", "config": self.config.to_dict()}
        save_npz_atomic(path, arrays, meta)

    @classmethod
    def load(cls, path):
        arrays, meta = load_npz(path, kind="model")
        cfg = ModelConfig.from_dict(meta["config"])
        params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
        return cls(cfg, params)


def bound_log_var(raw):
    """Smooth bound ``B tanh(raw / B)`` keeping log-variances inside (-B, B).

    A hard clip has zero gradient outside the bounds, so a variance pushed
    past them early in online training can never recover.
    """
    return LOG_VAR_BOUND * np.tanh(raw / LOG_VAR_BOUND)


def embedding_width(cardinality, ratio):
    return max(1, math.ceil(ratio * cardinality - 1e-12))


def save_npz_atomic(path, arrays: dict, meta: dict):
    """Write arrays plus JSON metadata; the target is replaced only after a complete write."""
    path = Path(path)
    meta = dict(meta, version=CHECKPOINT_VERSION)
    payload = dict(arrays)
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_npz(path, kind=None):
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path}: no metadata block")
    meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}"
        )
    if kind is not None and meta.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, got {meta.get('kind')}")
    return arrays, meta


def gradcheck_problem(config: ModelConfig, seed=0, batch=2, seq_len=None):
    """A random model and one sample group for finite-difference checks.

    LSTM groups run ``seq_len`` steps (default 3) from random boundary states;
    DNN groups take a single input step.
    """
    rng = np.random.default_rng(seed)
    cfg = ModelConfig.from_dict(dict(config.to_dict(), seed=seed))
    model = Model(cfg)
    if seq_len is None:
        seq_len = 3 if cfg.encoder == "lstm" else 1
    n_cat = len(cfg.categoricals)
    cards = [c + 1 for _, c in cfg.categoricals]

    def cats(*shape):
        out = np.zeros(shape + (n_cat,), dtype=np.int64)
        for k, n in enumerate(cards):
            out[..., k] = rng.integers(0, n, size=shape)
        return out

    h0 = c0 = None
    if cfg.encoder == "lstm":
        h0 = rng.uniform(-0.5, 0.5, size=(cfg.layers, batch, cfg.hidden_dim))
        c0 = rng.uniform(-0.5, 0.5, size=(cfg.layers, batch, cfg.hidden_dim))
    group = SampleGroup(
        counts_seq=rng.normal(size=(batch, seq_len, cfg.count_dim)),
        cats_seq=cats(batch, seq_len),
        target_counts=rng.normal(size=(batch, cfg.count_dim)),
        target_cats=cats(batch),
        h0=h0,
        c0=c0,
    )
    return model, [group]


def check_gradients(config: ModelConfig, seed=0, tolerance=1e-4, **kwargs):
    """Finite-difference check of ``Model.batch_loss`` on a random problem."""
    from insider_stream.numerics import gradient_check

    model, groups = gradcheck_problem(config, seed, **kwargs)

    def loss_fn(params):
        return model.batch_loss(groups, grad=True)

    def value_fn(params):
        return model.batch_loss(groups, grad=False)[0]

    return gradient_check(loss_fn, model.params, tolerance=tolerance, value_fn=value_fn)
