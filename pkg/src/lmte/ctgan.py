"""Conditional tabular GAN for locality sampling.

Numeric columns are represented by mode-specific normalization (a scalar
offset within one component of a per-column Gaussian mixture plus a mode
indicator), categoricals by one-hot blocks. Training conditions both the
generator and the critic on a (column, category) one-hot drawn by
log-frequency, and optimizes the WGAN objective with a gradient penalty.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .neural import AdamState, Mlp, adam_step, backward, forward, gradient_penalty, mlp_init
from .tabular import NUMERICAL, Dataset, Schema

MODE_WEIGHT_FLOOR = 0.005
STDEV_FLOOR = 1e-6
GUMBEL_TAU = 0.2


class CtganError(RuntimeError):
    pass


class TrainingDiverged(CtganError):
    def __init__(self, epoch, step, critic_loss, gen_loss):
        super().__init__(
            f"non-finite loss at epoch {epoch} step {step}: "
            f"critic={critic_loss!r} generator={gen_loss!r}"
        )
        self.epoch = epoch
        self.step = step


@dataclass
class Mode:
    weight: float
    mean: float
    stdev: float


@dataclass
class ModeNormalizer:
    """1-D Gaussian mixture fitted by EM; only modes above the weight floor
    stay active and their weights are renormalized."""

    modes: list[Mode]
    active: list[int]
    loglik_trace: list[float] = field(default_factory=list)

    @property
    def n_active(self) -> int:
        return len(self.active)

    def active_params(self):
        w = np.array([self.modes[i].weight for i in self.active])
        mu = np.array([self.modes[i].mean for i in self.active])
        sd = np.array([self.modes[i].stdev for i in self.active])
        return w / w.sum(), mu, sd


def fit_mode_normalizer(values: np.ndarray, k_modes: int = 5, seed: int = 0,
                        max_iter: int = 100, tol: float = 1e-8) -> ModeNormalizer:
    """EM for a k-component 1-D Gaussian mixture, quantile-initialized.

    The initialization is deterministic (means at equally spaced quantiles),
    so results do not depend on `seed`; the argument is kept for interface
    stability. k is reduced to the number of distinct values when smaller.
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise CtganError("cannot fit a mode normalizer on an empty column")
    distinct = np.unique(x)
    k = max(1, min(k_modes, distinct.size))
    if distinct.size == 1:
        mode = Mode(1.0, float(distinct[0]), STDEV_FLOOR)
        return ModeNormalizer([mode], [0], [0.0])

    mu = np.quantile(x, (np.arange(k) + 0.5) / k)
    sd = np.full(k, max(float(x.std()), STDEV_FLOOR))
    w = np.full(k, 1.0 / k)

    trace = []
    prev = -np.inf
    for _ in range(max_iter):
        # E-step in log space
        logp = (np.log(w)[None, :]
                - 0.5 * np.log(2 * np.pi * sd[None, :] ** 2)
                - 0.5 * ((x[:, None] - mu[None, :]) / sd[None, :]) ** 2)
        m = logp.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logp - m).sum(axis=1))
        ll = float(lse.sum())
        trace.append(ll)
        resp = np.exp(logp - lse[:, None])
        # M-step
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        w = nk / x.size
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - mu[None, :]) ** 2).sum(axis=0) / nk
        sd = np.maximum(np.sqrt(var), STDEV_FLOOR)
        if abs(ll - prev) < tol:
            break
        prev = ll

    modes = [Mode(float(w[i]), float(mu[i]), float(sd[i])) for i in range(k)]
    active = [i for i in range(k) if w[i] >= MODE_WEIGHT_FLOOR]
    if not active:
        active = [int(np.argmax(w))]
    return ModeNormalizer(modes, active, trace)


# ---------------------------------------------------------------------------
# Encoded row layout
# ---------------------------------------------------------------------------

@dataclass
class GanLayout:
    """Slot layout of the GAN's encoded rows, in schema column order.

    Numeric column: one alpha slot followed by its mode-indicator one-hot.
    Categorical column: its category one-hot.
    """

    schema: Schema
    normalizers: dict[int, ModeNormalizer]

    def blocks(self):
        pos = 0
        out = []
        for j, col in enumerate(self.schema.columns):
            if col.kind == NUMERICAL:
                k = self.normalizers[j].n_active
                out.append((j, "numeric", pos, 1 + k))
                pos += 1 + k
            else:
                w = len(col.categories)
                out.append((j, "categorical", pos, w))
                pos += w
        return out

    @property
    def width(self) -> int:
        return sum(w for _, _, _, w in self.blocks())

    def alpha_slots(self) -> list[int]:
        return [pos for _, kind, pos, _ in self.blocks() if kind == "numeric"]

    def softmax_segments(self) -> list[tuple[int, int]]:
        segs = []
        for _, kind, pos, width in self.blocks():
            if kind == "numeric":
                if width - 1 > 0:
                    segs.append((pos + 1, width - 1))
            else:
                segs.append((pos, width))
        return segs

    def categorical_segment(self, col_index: int) -> tuple[int, int]:
        for j, kind, pos, width in self.blocks():
            if j == col_index and kind == "categorical":
                return pos, width
        raise CtganError(f"column {col_index} is not categorical")


def encode_rows(layout: GanLayout, data: Dataset, rng: np.random.Generator) -> np.ndarray:
    """Mode-specific normalization of every row.

    Each numeric cell samples its mode with probability proportional to
    weight * N(x; mean, stdev) and stores alpha = (x - mean) / (4 stdev)
    clamped to [-1, 1] next to the mode one-hot.
    """
    n = data.n_rows
    out = np.zeros((n, layout.width))
    for j, kind, pos, width in layout.blocks():
        if kind == "categorical":
            idx = data.values[:, j].astype(int)
            out[np.arange(n), pos + idx] = 1.0
            continue
        norm = layout.normalizers[j]
        w, mu, sd = norm.active_params()
        x = data.values[:, j]
        logp = (np.log(w)[None, :]
                - np.log(sd)[None, :]
                - 0.5 * ((x[:, None] - mu[None, :]) / sd[None, :]) ** 2)
        m = logp.max(axis=1, keepdims=True)
        p = np.exp(logp - m)
        p_sum = p.sum(axis=1, keepdims=True)
        bad = ~np.isfinite(p_sum[:, 0]) | (p_sum[:, 0] <= 0)
        p = np.where(bad[:, None], 0.0, p / np.where(p_sum > 0, p_sum, 1.0))
        if np.any(bad):  # all densities underflowed: fall back to nearest mode
            nearest = np.argmin(np.abs(x[:, None] - mu[None, :]) / sd[None, :], axis=1)
            p[bad, :] = 0.0
            p[bad, nearest[bad]] = 1.0
        cum = np.cumsum(p, axis=1)
        u = rng.uniform(size=(n, 1))
        chosen = (u > cum).sum(axis=1)
        chosen = np.clip(chosen, 0, len(mu) - 1)
        alpha = (x - mu[chosen]) / (4.0 * sd[chosen])
        out[:, pos] = np.clip(alpha, -1.0, 1.0)
        out[np.arange(n), pos + 1 + chosen] = 1.0
    return out


def encode_row(layout: GanLayout, row: np.ndarray,
               rng: np.random.Generator | None = None) -> np.ndarray:
    ds = Dataset(layout.schema, np.asarray(row, dtype=float)[None, :])
    return encode_rows(layout, ds, rng or np.random.default_rng(0))[0]


def decode_rows(layout: GanLayout, encoded: np.ndarray) -> Dataset:
    """Inverse of encode_rows: x = alpha * 4 stdev + mean of the argmax mode."""
    encoded = np.asarray(encoded, dtype=float)
    if encoded.ndim != 2 or encoded.shape[1] != layout.width:
        raise CtganError(f"encoded width {encoded.shape} != layout width {layout.width}")
    n = encoded.shape[0]
    values = np.empty((n, len(layout.schema.columns)))
    for j, kind, pos, width in layout.blocks():
        if kind == "categorical":
            values[:, j] = np.argmax(encoded[:, pos:pos + width], axis=1)
            continue
        norm = layout.normalizers[j]
        _, mu, sd = norm.active_params()
        chosen = np.argmax(encoded[:, pos + 1:pos + width], axis=1)
        alpha = encoded[:, pos]
        values[:, j] = alpha * 4.0 * sd[chosen] + mu[chosen]
    return Dataset(layout.schema, values)


def decode_row(layout: GanLayout, encoded: np.ndarray) -> np.ndarray:
    return decode_rows(layout, np.asarray(encoded, dtype=float)[None, :]).values[0]


# ---------------------------------------------------------------------------
# Conditional vectors
# ---------------------------------------------------------------------------

@dataclass
class CondLayout:
    """One-hot layout over (categorical column, category) pairs."""

    schema: Schema

    def blocks(self):
        pos = 0
        out = []
        for j in self.schema.categorical_indices():
            w = len(self.schema.columns[j].categories)
            out.append((j, pos, w))
            pos += w
        return out

    @property
    def width(self) -> int:
        return sum(w for _, _, w in self.blocks())


def category_frequencies(data: Dataset) -> dict[int, np.ndarray]:
    """Per categorical column, the count of each category in the rows."""
    freq = {}
    for j in data.schema.categorical_indices():
        k = len(data.schema.columns[j].categories)
        freq[j] = np.bincount(data.values[:, j].astype(int), minlength=k).astype(float)
    return freq


def sample_cond_vectors(layout: CondLayout, freq: dict[int, np.ndarray], n: int,
                        rng: np.random.Generator) -> tuple[np.ndarray, list]:
    """Training-by-sampling: pick a categorical column uniformly, then one of
    its categories with probability proportional to log(1 + count).

    Returns (cond matrix, [(column index, category index) per row]); both are
    empty-width/None when the schema has no categorical columns.
    """
    blocks = layout.blocks()
    cond = np.zeros((n, layout.width))
    picks: list[tuple[int, int] | None] = [None] * n
    if not blocks:
        return cond, picks
    col_choice = rng.integers(0, len(blocks), size=n)
    for i in range(n):
        j, pos, width = blocks[col_choice[i]]
        logw = np.log1p(freq[j])
        total = logw.sum()
        if total <= 0:
            cat = int(rng.integers(0, width))
        else:
            cat = int(rng.choice(width, p=logw / total))
        cond[i, pos + cat] = 1.0
        picks[i] = (j, cat)
    return cond, picks


def sample_cond_vector(layout: CondLayout, freq: dict[int, np.ndarray],
                       rng: np.random.Generator) -> np.ndarray:
    return sample_cond_vectors(layout, freq, 1, rng)[0][0]


# ---------------------------------------------------------------------------
# Generator output activation
# ---------------------------------------------------------------------------

def _gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(low=np.finfo(float).tiny, high=1.0, size=shape)
    return -np.log(-np.log(u))

def generator_activate(raw: np.ndarray, layout: GanLayout, rng: np.random.Generator,
                       tau: float = GUMBEL_TAU):
    """tanh on alpha slots, Gumbel-softmax (temperature tau) on one-hot
    segments. Soft samples flow to the critic; no straight-through trick."""
    out = raw.copy()
    alphas = layout.alpha_slots()
    out[:, alphas] = np.tanh(raw[:, alphas])
    segs = layout.softmax_segments()
    for off, width in segs:
        noisy = (raw[:, off:off + width] + _gumbel(rng, (raw.shape[0], width))) / tau
        m = noisy.max(axis=1, keepdims=True)
        e = np.exp(noisy - m)
        out[:, off:off + width] = e / e.sum(axis=1, keepdims=True)
    return out


def generator_activate_backward(raw: np.ndarray, activated: np.ndarray,
                                grad: np.ndarray, layout: GanLayout,
                                tau: float = GUMBEL_TAU) -> np.ndarray:
    draw = grad.copy()
    alphas = layout.alpha_slots()
    draw[:, alphas] = grad[:, alphas] * (1.0 - activated[:, alphas] ** 2)
    for off, width in layout.softmax_segments():
        p = activated[:, off:off + width]
        g = grad[:, off:off + width]
        dot = (p * g).sum(axis=1, keepdims=True)
        draw[:, off:off + width] = p * (g - dot) / tau
    return draw


def harden_segments(activated: np.ndarray, layout: GanLayout) -> np.ndarray:
    """Replace every softmax segment by its argmax one-hot."""
    out = activated.copy()
    for off, width in layout.softmax_segments():
        block = activated[:, off:off + width]
        hard = np.zeros_like(block)
        hard[np.arange(block.shape[0]), np.argmax(block, axis=1)] = 1.0
        out[:, off:off + width] = hard
    return out


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class CtganConfig:
    epochs: int = 300
    batch: int = 50
    z_dim: int = 32
    critic_steps: int = 1
    gp_coeff: float = 10.0
    hidden: tuple[int, int] = (64, 64)
    k_modes: int = 5
    tau: float = GUMBEL_TAU
    lr: float = 2e-4
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch": self.batch, "z_dim": self.z_dim,
            "critic_steps": self.critic_steps, "gp_coeff": self.gp_coeff,
            "hidden": list(self.hidden), "k_modes": self.k_modes,
            "tau": self.tau, "lr": self.lr, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CtganConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class CtganModel:
    schema: Schema
    layout: GanLayout
    cond_layout: CondLayout
    freq: dict[int, np.ndarray]
    generator: Mlp
    critic: Mlp
    config: CtganConfig
    losses: list[dict] = field(default_factory=list)  # per-epoch loss summary


def train_ctgan(data: Dataset, config: CtganConfig | None = None) -> CtganModel:
    """Adversarially train the conditional GAN on a (small) Dataset.

    Per step: draw conditional vectors, draw matching real rows, update the
    critic on the WGAN loss with gradient penalty, then update the generator
    on the negated critic score plus the conditioned-category cross-entropy.
    Raises TrainingDiverged as soon as any loss goes non-finite.
    """
    cfg = config or CtganConfig()
    if data.n_rows < 1:
        raise CtganError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)

    normalizers = {
        j: fit_mode_normalizer(data.values[:, j], cfg.k_modes, seed=cfg.seed)
        for j in data.schema.numerical_indices()
    }
    layout = GanLayout(data.schema, normalizers)
    cond_layout = CondLayout(data.schema)
    freq = category_frequencies(data)

    enc = encode_rows(layout, data, rng)
    n, width = enc.shape
    cond_w = cond_layout.width

    # Row pools per (column, category) for conditional real draws.
    pools: dict[tuple[int, int], np.ndarray] = {}
    for j, pos, w in cond_layout.blocks():
        for c in range(w):
            pools[(j, c)] = np.flatnonzero(data.values[:, j].astype(int) == c)

    gen = mlp_init([cfg.z_dim + cond_w, *cfg.hidden, width],
                   ["relu"] * len(cfg.hidden) + ["linear"], seed=cfg.seed + 1)
    crit = mlp_init([width + cond_w, *cfg.hidden, 1],
                    ["relu"] * len(cfg.hidden) + ["linear"], seed=cfg.seed + 2)
    adam_g = AdamState.for_params(gen.parameters(), lr=cfg.lr)
    adam_c = AdamState.for_params(crit.parameters(), lr=cfg.lr)

    batch = min(cfg.batch, n)
    steps = max(1, -(-n // batch))
    losses = []

    def draw_real(picks, b):
        idx = np.empty(b, dtype=int)
        for i, pick in enumerate(picks):
            if pick is None:
                idx[i] = rng.integers(0, n)
            else:
                pool = pools[pick]
                idx[i] = pool[rng.integers(0, pool.size)]
        return idx

    def make_fake(b, cond):
        z = rng.standard_normal((b, cfg.z_dim))
        gin = np.concatenate([z, cond], axis=1) if cond_w else z
        raw, cache = forward(gen, gin)
        act = generator_activate(raw, layout, rng, cfg.tau)
        return raw, cache, act

    for epoch in range(cfg.epochs):
        c_losses, g_losses, penalties = [], [], []
        for step in range(steps):
            # --- critic update(s)
            for _ in range(cfg.critic_steps):
                cond, picks = sample_cond_vectors(cond_layout, freq, batch, rng)
                real_idx = draw_real(picks, batch)
                real_in = np.concatenate([enc[real_idx], cond], axis=1) if cond_w \
                    else enc[real_idx]
                _, _, fake_act = make_fake(batch, cond)
                fake_in = np.concatenate([fake_act, cond], axis=1) if cond_w else fake_act

                out_fake, cache_fake = forward(crit, fake_in)
                out_real, cache_real = forward(crit, real_in)
                pen, gp_grads = gradient_penalty(crit, real_in, fake_in, rng)
                c_loss = float(out_fake.mean() - out_real.mean() + cfg.gp_coeff * pen)

                gf, _ = backward(crit, cache_fake, np.full_like(out_fake, 1.0 / batch))
                gr, _ = backward(crit, cache_real, np.full_like(out_real, -1.0 / batch))
                grads = []
                for (wf, bf), (wr, br), (wp, bp) in zip(gf, gr, gp_grads):
                    grads.append(wf + wr + cfg.gp_coeff * wp)
                    grads.append(bf + br + cfg.gp_coeff * bp)
                adam_step(adam_c, crit.parameters(), grads)
                c_losses.append(c_loss)
                penalties.append(pen)

            # --- generator update
            cond, picks = sample_cond_vectors(cond_layout, freq, batch, rng)
            raw, gcache, fake_act = make_fake(batch, cond)
            fake_in = np.concatenate([fake_act, cond], axis=1) if cond_w else fake_act
            out_fake, cache_fake = forward(crit, fake_in)
            _, dc_in = backward(crit, cache_fake, np.full_like(out_fake, -1.0 / batch))
            d_act = dc_in[:, :width].copy()

            ce = 0.0
            if cond_w:
                for i, pick in enumerate(picks):
                    j, c = pick
                    off, w = layout.categorical_segment(j)
                    p = max(fake_act[i, off + c], 1e-12)
                    ce -= np.log(p)
                    d_act[i, off + c] += -1.0 / (p * batch)
                ce /= batch
            g_loss = float(-out_fake.mean() + ce)

            d_raw = generator_activate_backward(raw, fake_act, d_act, layout, cfg.tau)
            ggrads_pairs, _ = backward(gen, gcache, d_raw)
            ggrads = [g for pair in ggrads_pairs for g in pair]
            adam_step(adam_g, gen.parameters(), ggrads)
            g_losses.append(g_loss)

            if not (np.isfinite(c_losses[-1]) and np.isfinite(g_loss)):
                raise TrainingDiverged(epoch, step, c_losses[-1], g_loss)

        losses.append({
            "epoch": epoch,
            "critic": float(np.mean(c_losses)),
            "generator": float(np.mean(g_losses)),
            "penalty": float(np.mean(penalties)),
        })

    return CtganModel(data.schema, layout, cond_layout, freq, gen, crit, cfg, losses)


def sample(model: CtganModel, n: int, seed: int = 0) -> Dataset:
    """Draw n synthetic rows: (z, cond) pairs through the generator, softmax
    segments hardened by argmax, decoded back to schema-valid raw rows."""
    if n < 1:
        raise CtganError("n must be >= 1")
    rng = np.random.default_rng(seed)
    cfg = model.config
    cond_w = model.cond_layout.width
    cond, _ = sample_cond_vectors(model.cond_layout, model.freq, n, rng)
    z = rng.standard_normal((n, cfg.z_dim))
    gin = np.concatenate([z, cond], axis=1) if cond_w else z
    raw, _ = forward(model.generator, gin)
    act = generator_activate(raw, model.layout, rng, cfg.tau)
    hard = harden_segments(act, model.layout)
    return decode_rows(model.layout, hard)


# ---------------------------------------------------------------------------
# Persistence: JSON sidecar + binary parameter blob
# ---------------------------------------------------------------------------

_BLOB_MAGIC = b"LMTEGAN1"


def _mlp_spec(mlp: Mlp) -> dict:
    return {
        "dims": [mlp.layers[0].weight.shape[0]] + [l.weight.shape[1] for l in mlp.layers],
        "activations": [l.activation for l in mlp.layers],
        "segments": [list(s) for s in mlp.segments],
    }


def save_model(model: CtganModel, stem) -> None:
    """Write <stem>.json (normalizers, layout, config) and <stem>.bin
    (parameter blob with a length/checksum header)."""
    stem = str(stem)
    meta = {
        "format": "lmte-ctgan/1",
        "schema": model.schema.to_dict(),
        "config": model.config.to_dict(),
        "freq": {str(j): list(map(float, v)) for j, v in model.freq.items()},
        "normalizers": {
            str(j): {
                "modes": [[m.weight, m.mean, m.stdev] for m in nm.modes],
                "active": nm.active,
            }
            for j, nm in model.layout.normalizers.items()
        },
        "generator": _mlp_spec(model.generator),
        "critic": _mlp_spec(model.critic),
        "losses": model.losses,
    }
    with open(stem + ".json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)

    params = model.generator.parameters() + model.critic.parameters()
    payload = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in params)
    digest = hashlib.sha256(payload).digest()
    with open(stem + ".bin", "wb") as fh:
        fh.write(_BLOB_MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(digest)
        fh.write(payload)


def load_model(stem) -> CtganModel:
    stem = str(stem)
    with open(stem + ".json", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format") != "lmte-ctgan/1":
        raise CtganError(f"unsupported model format {meta.get('format')!r}")
    schema = Schema.from_dict(meta["schema"])
    cfg = CtganConfig.from_dict(meta["config"])
    normalizers = {}
    for js, rec in meta["normalizers"].items():
        modes = [Mode(*m) for m in rec["modes"]]
        normalizers[int(js)] = ModeNormalizer(modes, list(rec["active"]))
    layout = GanLayout(schema, normalizers)
    freq = {int(j): np.asarray(v, dtype=float) for j, v in meta["freq"].items()}

    def build(spec):
        return mlp_init(spec["dims"], spec["activations"], seed=0,
                        segments=[tuple(s) for s in spec["segments"]])

    gen = build(meta["generator"])
    crit = build(meta["critic"])

    with open(stem + ".bin", "rb") as fh:
        blob = fh.read()
    if blob[:8] != _BLOB_MAGIC:
        raise CtganError("bad parameter blob magic")
    (length,) = struct.unpack("<Q", blob[8:16])
    digest = blob[16:48]
    payload = blob[48:]
    if len(payload) != length:
        raise CtganError(f"parameter blob length mismatch: {len(payload)} != {length}")
    if hashlib.sha256(payload).digest() != digest:
        raise CtganError("parameter blob checksum mismatch")

    params = gen.parameters() + crit.parameters()
    pos = 0
    for p in params:
        nbytes = p.size * 8
        arr = np.frombuffer(payload[pos:pos + nbytes], dtype="<f8").reshape(p.shape)
        p[...] = arr
        pos += nbytes
    if pos != length:
        raise CtganError("parameter blob has trailing bytes")
    return CtganModel(schema, layout, CondLayout(schema), freq, gen, crit, cfg,
                      list(meta.get("losses", [])))
