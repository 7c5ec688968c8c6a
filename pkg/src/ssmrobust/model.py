"""Compact bidirectional selective state-space image classifier.

The parameter tree is an ordered dict of dot-path keys whose names fall into
exactly seven architectural groups (patch_embed, stage0..stage3,
classifier_head, ssm_related); the fault drivers rely on that taxonomy to
place layer-filtered bit flips.

Pipeline: patch-embedding convolution -> token sequence -> four stages of
{layer norm, bidirectional selective scan, residual} with 2x2 token-grid
mean-pool merging (channel-doubling linear map) between stages -> global mean
pool -> linear classifier head.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DTYPE, Tensor
from .errors import DimensionError, TaxonomyError
from .rng import make_rng

GROUPS = (
    "patch_embed",
    "stage0",
    "stage1",
    "stage2",
    "stage3",
    "classifier_head",
    "ssm_related",
)

ACTIVATION_SITES = (
    "patch_embed",
    "stage0",
    "stage1",
    "stage2",
    "stage3",
    "pool",
    "classifier_head",
)

_PREFIX_GROUPS = (
    ("patch_embed", "patch_embed"),
    ("stage0_layers", "stage0"),
    ("stage1_layers", "stage1"),
    ("stage2_layers", "stage2"),
    ("stage3_layers", "stage3"),
    ("classifier_head", "classifier_head"),
)

_CONV_K = 3  # depthwise token-mixing kernel width


def group_of_key(key: str) -> str:
    """Architectural group of a parameter key.

    Any key containing the substring "ssm" belongs to ssm_related; otherwise
    the longest matching prefix among the structural groups decides.
    """
    if "ssm" in key:
        return "ssm_related"
    best = None
    best_len = -1
    for prefix, group in _PREFIX_GROUPS:
        if key.startswith(prefix) and len(prefix) > best_len:
            best, best_len = group, len(prefix)
    if best is None:
        raise TaxonomyError(f"parameter key {key!r} matches no architectural group")
    return best


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    image_size: int = 28
    in_channels: int = 1
    patch_size: int = 4
    embed_dim: int = 32
    stage_depths: tuple = (1, 1, 1, 1)
    state_dim: int = 8

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.in_channels not in (1, 3):
            raise ValueError("in_channels must be 1 or 3")
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if len(self.stage_depths) != 4:
            raise ValueError("stage_depths must have exactly 4 entries")
        if any(d < 1 for d in self.stage_depths):
            raise ValueError("every stage depth must be >= 1")
        object.__setattr__(self, "stage_depths", tuple(int(d) for d in self.stage_depths))

    @property
    def stage_dims(self):
        return tuple(self.embed_dim * (2**s) for s in range(4))

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "image_size": self.image_size,
            "in_channels": self.in_channels,
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "stage_depths": list(self.stage_depths),
            "state_dim": self.state_dim,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stage_depths"] = tuple(d["stage_depths"])
        return cls(**d)


@dataclass
class SsmBlockParams:
    """Tensors of one selective-scan block, resolved from the tree."""

    norm_w: Tensor
    norm_b: Tensor
    in_w: Tensor
    in_b: Tensor
    conv_w: Tensor
    conv_b: Tensor
    dt_w: Tensor
    dt_b: Tensor
    a_log: Tensor
    b_w: Tensor
    c_w: Tensor
    skip_d: Tensor
    out_w: Tensor
    out_b: Tensor

    @classmethod
    def from_tree(cls, params, prefix):
        return cls(
            norm_w=params[prefix + "norm.weight"],
            norm_b=params[prefix + "norm.bias"],
            in_w=params[prefix + "in_proj.weight"],
            in_b=params[prefix + "in_proj.bias"],
            conv_w=params[prefix + "ssm.conv1d.weight"],
            conv_b=params[prefix + "ssm.conv1d.bias"],
            dt_w=params[prefix + "ssm.dt_proj.weight"],
            dt_b=params[prefix + "ssm.dt_proj.bias"],
            a_log=params[prefix + "ssm.A_log"],
            b_w=params[prefix + "ssm.B_proj.weight"],
            c_w=params[prefix + "ssm.C_proj.weight"],
            skip_d=params[prefix + "ssm.D"],
            out_w=params[prefix + "out_proj.weight"],
            out_b=params[prefix + "out_proj.bias"],
        )


def _linear(x2d: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    y = ad.matmul(x2d, ad.transpose(w))
    if b is not None:
        y = ad.add(y, b)
    return y


def _tokens_linear(tokens: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    bsz, length, dim = tokens.shape
    flat = ad.reshape(tokens, (bsz * length, dim))
    out = _linear(flat, w, b)
    return ad.reshape(out, (bsz, length, w.shape[0]))


def depthwise_conv_tokens(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Depthwise conv over the token axis of [B,L,D], zero-padded, width 3."""
    bsz, length, dim = x.shape
    k = w.shape[1]
    offset = k // 2
    xd, wd = x.data, w.data

    def shifted(arr, s):
        out = np.zeros_like(arr)
        if s == 0:
            out[:] = arr
        elif s > 0:
            out[:, : length - s, :] = arr[:, s:, :]
        else:
            out[:, -s:, :] = arr[:, : length + s, :]
        return out

    acc = np.broadcast_to(b.data, (bsz, length, dim)).astype(DTYPE)
    with np.errstate(all="ignore"):
        for j in range(k):
            acc = acc + shifted(xd, j - offset) * wd[:, j]
    out = Tensor(acc)

    def backward(g):
        with np.errstate(all="ignore"):
            dx = np.zeros_like(xd)
            dw = np.zeros_like(wd)
            for j in range(k):
                xs = shifted(xd, j - offset)
                dw[:, j] = np.einsum("bld,bld->d", g, xs).astype(DTYPE, copy=False)
                dx += shifted(g, -(j - offset)) * wd[:, j]
            db = g.sum(axis=(0, 1), dtype=DTYPE)
        return dx, dw, db

    ad.record(out, (x, w, b), backward)
    return out


def ssm_scan(u: Tensor, dt: Tensor, bm: Tensor, cm: Tensor, a: Tensor, skip_d: Tensor,
             reverse: bool = False) -> Tensor:
    """Fused discretized recurrence over the token axis.

    h_t = exp(dt_t * A) ⊙ h_{t-1} + (dt_t * u_t) ⊗ B_t,  h_0 = 0
    y_t = C_t · h_t + D ⊙ u_t

    ``reverse`` scans right-to-left with output kept in input order.
    """
    bsz, length, dim = u.shape
    n = a.shape[1]
    ud, dtd, bmd, cmd, ad_, dd = u.data, dt.data, bm.data, cm.data, a.data, skip_d.data
    order = range(length - 1, -1, -1) if reverse else range(length)

    y = np.empty((bsz, length, dim), dtype=DTYPE)
    hs = np.empty((length, bsz, dim, n), dtype=DTYPE)
    decays = np.empty((length, bsz, dim, n), dtype=DTYPE)
    taping = ad.active_tape() is not None

    with np.errstate(all="ignore"):
        h = np.zeros((bsz, dim, n), dtype=DTYPE)
        for t in order:
            decay = np.exp(dtd[:, t, :, None] * ad_[None, :, :])
            inp = (dtd[:, t, :] * ud[:, t, :])[:, :, None] * bmd[:, t, None, :]
            h = decay * h + inp
            y[:, t, :] = np.einsum("bdn,bn->bd", h, cmd[:, t, :]) + dd * ud[:, t, :]
            if taping:
                hs[t] = h
                decays[t] = decay
    out = Tensor(y)
    if not taping:
        return out

    steps = list(order)

    def backward(g):
        du = np.zeros_like(ud)
        ddt = np.zeros_like(dtd)
        dbm = np.zeros_like(bmd)
        dcm = np.zeros_like(cmd)
        da = np.zeros_like(ad_)
        ddp = np.zeros_like(dd)
        dh_carry = np.zeros((bsz, dim, n), dtype=DTYPE)
        with np.errstate(all="ignore"):
            for i in range(len(steps) - 1, -1, -1):
                t = steps[i]
                h_prev = hs[steps[i - 1]] if i > 0 else np.zeros((bsz, dim, n), dtype=DTYPE)
                g_t = g[:, t, :]
                dcm[:, t, :] = np.einsum("bd,bdn->bn", g_t, hs[t]).astype(DTYPE, copy=False)
                ddp += (g_t * ud[:, t, :]).sum(axis=0, dtype=DTYPE)
                du[:, t, :] += g_t * dd
                dh = dh_carry + g_t[:, :, None] * cmd[:, t, None, :]
                ddecay = dh * h_prev
                scaled = ddecay * decays[t]
                ddt_t = (scaled * ad_[None, :, :]).sum(axis=2, dtype=DTYPE)
                da += (scaled * dtd[:, t, :, None]).sum(axis=0, dtype=DTYPE)
                d_dtu = (dh * bmd[:, t, None, :]).sum(axis=2, dtype=DTYPE)
                dbm[:, t, :] = np.einsum(
                    "bdn,bd->bn", dh, dtd[:, t, :] * ud[:, t, :]
                ).astype(DTYPE, copy=False)
                ddt[:, t, :] = ddt_t + d_dtu * ud[:, t, :]
                du[:, t, :] += d_dtu * dtd[:, t, :]
                dh_carry = dh * decays[t]
        return du, ddt, dbm, dcm, da, ddp

    ad.record(out, (u, dt, bm, cm, a, skip_d), backward)
    return out


def selective_scan(u: Tensor, blk: SsmBlockParams, direction: str) -> Tensor:
    """Input-dependent state-space recurrence over [B,L,D] tokens."""
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    dt = ad.softplus(_tokens_linear(u, blk.dt_w, blk.dt_b))
    bsz, length, dim = u.shape
    flat = ad.reshape(u, (bsz * length, dim))
    n = blk.b_w.shape[0]
    bm = ad.reshape(_linear(flat, blk.b_w, None), (bsz, length, n))
    cm = ad.reshape(_linear(flat, blk.c_w, None), (bsz, length, n))
    a = ad.neg(ad.exp(blk.a_log))
    return ssm_scan(u, dt, bm, cm, a, blk.skip_d, reverse=(direction == "backward"))


def pool_tokens_2x2(tokens: Tensor, grid_h: int, grid_w: int) -> Tensor:
    """Mean-pool a [B, gh*gw, D] token grid by 2x2 windows (ceil at edges)."""
    bsz, length, dim = tokens.shape
    if length != grid_h * grid_w:
        raise DimensionError(f"token count {length} does not match grid {grid_h}x{grid_w}")
    oh, ow = (grid_h + 1) // 2, (grid_w + 1) // 2
    xg = tokens.data.reshape(bsz, grid_h, grid_w, dim)
    out_arr = np.empty((bsz, oh, ow, dim), dtype=DTYPE)
    windows = []
    with np.errstate(all="ignore"):
        for i in range(oh):
            for j in range(ow):
                r0, r1 = 2 * i, min(2 * i + 2, grid_h)
                c0, c1 = 2 * j, min(2 * j + 2, grid_w)
                windows.append((i, j, r0, r1, c0, c1))
                out_arr[:, i, j, :] = xg[:, r0:r1, c0:c1, :].mean(axis=(1, 2), dtype=DTYPE)
    out = Tensor(out_arr.reshape(bsz, oh * ow, dim))

    def backward(g):
        gg = g.reshape(bsz, oh, ow, dim)
        dx = np.zeros_like(xg)
        for i, j, r0, r1, c0, c1 in windows:
            count = (r1 - r0) * (c1 - c0)
            dx[:, r0:r1, c0:c1, :] += (gg[:, i, j, None, None, :] / DTYPE(count)).reshape(
                bsz, 1, 1, dim
            )
        return (dx.reshape(bsz, length, dim),)

    ad.record(out, (tokens,), backward)
    return out, oh, ow


def decide_labels(logits: np.ndarray):
    """Argmax with ties broken toward the lowest class index.

    Rows that are entirely NaN predict class 0 and are counted separately so
    accuracy stays defined under catastrophic faults.
    """
    nan_mask = np.isnan(logits)
    all_nan = nan_mask.all(axis=1)
    safe = np.where(nan_mask, -np.inf, logits)
    labels = safe.argmax(axis=1).astype(np.int64)
    labels[all_nan] = 0
    return labels, int(all_nan.sum())


class SsmClassifier:
    """Functional model: parameters live in a tree, methods are pure."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg

    # -- initialization ----------------------------------------------------

    def init_params(self, seed: int) -> dict:
        cfg = self.cfg
        rng = make_rng(seed)

        def normal(shape, fan_in):
            return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape))

        tree: dict[str, Tensor] = {}
        p = cfg.patch_size
        tree["patch_embed.proj.weight"] = normal(
            (cfg.embed_dim, cfg.in_channels, p, p), cfg.in_channels * p * p
        )
        tree["patch_embed.proj.bias"] = Tensor(np.zeros(cfg.embed_dim))

        dims = cfg.stage_dims
        n = cfg.state_dim
        for s in range(4):
            d = dims[s]
            for i in range(cfg.stage_depths[s]):
                pre = f"stage{s}_layers.{i}."
                tree[pre + "norm.weight"] = Tensor(np.ones(d))
                tree[pre + "norm.bias"] = Tensor(np.zeros(d))
                tree[pre + "in_proj.weight"] = normal((d, d), d)
                tree[pre + "in_proj.bias"] = Tensor(np.zeros(d))
                tree[pre + "ssm.conv1d.weight"] = normal((d, _CONV_K), _CONV_K)
                tree[pre + "ssm.conv1d.bias"] = Tensor(np.zeros(d))
                tree[pre + "ssm.dt_proj.weight"] = normal((d, d), d)
                # softplus(bias) lands inside [1e-3, 1e-1]
                dt0 = np.exp(rng.uniform(math.log(2e-3), math.log(8e-2), size=d))
                tree[pre + "ssm.dt_proj.bias"] = Tensor(np.log(np.expm1(dt0)))
                # A = -exp(A_log) spans [-N, -1] per channel
                tree[pre + "ssm.A_log"] = Tensor(
                    np.tile(np.log(np.arange(1, n + 1, dtype=np.float64)), (d, 1))
                )
                tree[pre + "ssm.B_proj.weight"] = normal((n, d), d)
                tree[pre + "ssm.C_proj.weight"] = normal((n, d), d)
                tree[pre + "ssm.D"] = Tensor(np.ones(d))
                tree[pre + "out_proj.weight"] = normal((d, d), d)
                tree[pre + "out_proj.bias"] = Tensor(np.zeros(d))
            if s < 3:
                pre = f"stage{s}_layers.downsample."
                tree[pre + "weight"] = normal((2 * d, d), d)
                tree[pre + "bias"] = Tensor(np.zeros(2 * d))

        tree["classifier_head.weight"] = normal((cfg.num_classes, dims[3]), dims[3])
        tree["classifier_head.bias"] = Tensor(np.zeros(cfg.num_classes))
        return tree

    # -- forward -----------------------------------------------------------

    def _block(self, tokens: Tensor, blk: SsmBlockParams) -> Tensor:
        xn = ad.layer_norm(tokens, blk.norm_w, blk.norm_b)
        v = _tokens_linear(xn, blk.in_w, blk.in_b)
        v = ad.silu(depthwise_conv_tokens(v, blk.conv_w, blk.conv_b))
        fwd = selective_scan(v, blk, "forward")
        bwd = selective_scan(v, blk, "backward")
        y = ad.mul(ad.add(fwd, bwd), 0.5)
        return ad.add(tokens, _tokens_linear(y, blk.out_w, blk.out_b))

    def forward(self, params: dict, x: Tensor, activation_taps=None) -> Tensor:
        """Logits [B, num_classes] for images [B, C, H, W].

        ``activation_taps`` maps a site name to a raw-array transform applied
        to that module's output before downstream consumption (fault hooks);
        taps are for inference only, never under an open tape.
        """
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.image_size, cfg.image_size):
            raise DimensionError(
                f"input shape {x.shape} does not match config "
                f"(C={cfg.in_channels}, H=W={cfg.image_size})"
            )
        taps = activation_taps or {}
        for site in taps:
            if site not in ACTIVATION_SITES:
                raise TaxonomyError(f"unknown activation site {site!r}")

        def tap(site, tensor):
            fn = taps.get(site)
            return Tensor(fn(tensor.data.copy())) if fn is not None else tensor

        emb = ad.conv2d(
            x, params["patch_embed.proj.weight"], stride=cfg.patch_size, pad=0
        )
        emb = ad.add(emb, ad.reshape(params["patch_embed.proj.bias"], (1, -1, 1, 1)))
        bsz = x.shape[0]
        grid = cfg.image_size // cfg.patch_size
        tokens = ad.reshape(
            ad.transpose(emb, (0, 2, 3, 1)), (bsz, grid * grid, cfg.embed_dim)
        )
        tokens = tap("patch_embed", tokens)

        gh = gw = grid
        for s in range(4):
            for i in range(cfg.stage_depths[s]):
                blk = SsmBlockParams.from_tree(params, f"stage{s}_layers.{i}.")
                tokens = self._block(tokens, blk)
            if s < 3:
                tokens, gh, gw = pool_tokens_2x2(tokens, gh, gw)
                tokens = _tokens_linear(
                    tokens,
                    params[f"stage{s}_layers.downsample.weight"],
                    params[f"stage{s}_layers.downsample.bias"],
                )
            tokens = tap(f"stage{s}", tokens)

        pooled = tap("pool", ad.mean_axis(tokens, axis=1))
        logits = _linear(pooled, params["classifier_head.weight"], params["classifier_head.bias"])
        return tap("classifier_head", logits)

    def predict(self, params: dict, x: Tensor) -> np.ndarray:
        labels, _ = self.predict_with_diagnostics(params, x)
        return labels

    def predict_with_diagnostics(self, params: dict, x: Tensor):
        """(labels, all-NaN row count) for one forward pass."""
        logits = self.forward(params, x)
        return decide_labels(logits.data)
