"""ViT inference over five optical cores plus an electronic unit.

Attention scores use the decomposition ``Q K^T = (Q W_K^T) X^T``: cores C1-C3
hold ``W_Q``, ``W_K^T / sqrt(d_k)`` and ``X^T``, all known before the head
starts, so they tune together. C5 computes ``V = X W_V`` and C4 holds the
softmax rows as its weight bank while ``V`` streams through it. Heads run
back to back on the same five cores, so the C1-C3 tuning for the next head
overlaps C4/C5 work on the current one.

Every matrix product goes through :class:`Accelerator`. It runs the product
on the optical cores and appends the matching tune, stream, memory and adder
events to the schedule. With ``functional=False`` the numeric work is skipped
and only counters and the schedule are produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import OpticalCore, OpticalCoreConfig, TileStats, n_chunks
from .costs import DEFAULT_COST_TABLE, CostTable
from .quant import QuantTensor, dequantize, fold_scale, gelu, layernorm, quantize_symmetric, softmax_rows
from .trace import ScheduleTrace, Scheduler
from .vit import ViTConfig, ViTModel

# Electronic-unit operation counts per element.
SOFTMAX_OPS = 4  # max-subtract, exp, sum, divide
GELU_OPS = 8
LAYERNORM_OPS = 5
ADD_OPS = 1


@dataclass(frozen=True)
class PipelineOptions:
    softmax_as_weights: bool = True  # C4 holds softmax rows; False tunes V instead
    defer_value_stage: bool = True  # C5 starts only after the softmax, as in the 5-core flow
    core_groups: int = 1  # independent 5-core sets; heads are dealt round-robin
    act_bits: int = 8


@dataclass
class OperandPlan:
    """Three-stage score computation for one head.

    C1: ``Q = X W_Q``; C2: ``T = Q (W_K^T / sqrt(d_k))``; C3: ``A = T X^T``.
    All three tuned operands exist before the head starts.
    """

    x: QuantTensor
    w_q: QuantTensor
    w_kt: QuantTensor  # folded W_K^T / sqrt(d_k)
    x_t: QuantTensor
    d_k: int

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d_m(self) -> int:
        return self.x.shape[1]

    def exact_scores(self) -> np.ndarray:
        """Scores from the plan operands in real arithmetic, no intermediate rounding."""
        q = dequantize(self.x) @ dequantize(self.w_q)
        return (q @ dequantize(self.w_kt)) @ dequantize(self.x_t)


def decompose_qkt(x: QuantTensor, w_q: QuantTensor, w_k: QuantTensor) -> OperandPlan:
    if x.shape[1] != w_q.shape[0] or w_q.shape != w_k.shape:
        raise ValueError(f"shape mismatch: X {x.shape}, W_Q {w_q.shape}, W_K {w_k.shape}")
    d_k = w_q.shape[1]
    return OperandPlan(x=x, w_q=w_q, w_kt=fold_scale(w_k.T, d_k), x_t=x.T, d_k=d_k)


@dataclass(frozen=True)
class HeadShape:
    """Shape-only stand-in for an operand plan."""

    n: int
    d_m: int
    d_k: int = 64


class Accelerator:
    def __init__(
        self,
        core_config: OpticalCoreConfig | None = None,
        cost_table: CostTable = DEFAULT_COST_TABLE,
        options: PipelineOptions | None = None,
        functional: bool = True,
    ):
        self.core_config = core_config or OpticalCoreConfig()
        self.cost_table = cost_table
        self.options = options or PipelineOptions()
        self.functional = functional
        n_cores = 5 * self.options.core_groups
        self.cores = {f"C{i + 1}": OpticalCore(self._core_cfg(i), f"C{i + 1}") for i in range(n_cores)}
        self.scheduler = Scheduler(cost_table.duration, metadata={
            "functional": functional,
            "noise_mode": self.core_config.noise_mode,
            "adc_bits": self.core_config.adc_bits,
            "activation_quantization": "per_tensor_dynamic",
            "c4_operands": "softmax_tuned_v_streamed" if self.options.softmax_as_weights else "v_tuned_softmax_streamed",
            "value_stage_deferred": self.options.defer_value_stage,
            "softmax_overlaps_next_input": True,
            "core_groups": self.options.core_groups,
        })
        self.stats = TileStats()
        # set to a list to record (tag, x, w, out) for every functional product
        self.probe: Optional[list] = None

    def _core_cfg(self, i: int) -> OpticalCoreConfig:
        cfg = self.core_config
        if cfg.noise_mode == "stochastic":
            from dataclasses import replace
            return replace(cfg, seed=cfg.seed * 1009 + i)
        return cfg

    @property
    def trace(self) -> ScheduleTrace:
        return self.scheduler.trace

    def core_group(self, g: int) -> list[str]:
        return [f"C{5 * g + k + 1}" for k in range(5)]

    @property
    def all_cores(self) -> list[str]:
        return list(self.cores)

    def quantize(self, x) -> QuantTensor:
        return quantize_symmetric(x, self.options.act_bits)

    def elec(self, kind: str, ops: int, deps=(), tag: str = "") -> int:
        return self.scheduler.add("ELEC", kind, deps, tag, ops=int(ops))

    def matmul(self, core_ids: Sequence[str], x: QuantTensor, w: QuantTensor,
               x_deps=(), w_deps=(), tag: str = "") -> tuple[np.ndarray, list[int]]:
        """``x @ w`` on the given cores (arm groups dealt round-robin).

        ``x_deps`` gate the streamed operand, ``w_deps`` the tuned one. Returns the
        real-valued product and the ids of the events that finish it.
        """
        cfg = self.core_config
        n, d = x.shape
        m = w.shape[1]
        A = cfg.n_arms
        G = n_chunks(m, A)
        used = list(core_ids)[:G]
        out = np.zeros((n, m)) if self.functional else None
        done = []
        for k, cid in enumerate(used):
            cols = np.concatenate([np.arange(g * A, min(m, (g + 1) * A)) for g in range(k, G, len(used))])
            wk = w if len(used) == 1 else w[:, cols]
            res = self.cores[cid].tiled_matmul(x, wk, functional=self.functional)
            self.stats = self.stats + res.stats
            if self.functional:
                out[:, cols] = res.out.real()
            done.append(self._emit_tiles(cid, n, d, len(cols), x, wk, res.chunk_writes, x_deps, w_deps, f"{tag}@{cid}"))
        if not self.functional:
            out = np.broadcast_to(0.0, (n, m))
        elif self.probe is not None:
            self.probe.append((tag, x, w, out.copy()))
        return out, done

    def _emit_tiles(self, cid, n, d, m, x, w, writes, x_deps, w_deps, tag) -> int:
        cfg = self.core_config
        L, A = cfg.n_wavelengths, cfg.n_arms
        C, G = n_chunks(d, L), n_chunks(m, A)
        xb, wb = math.ceil(x.bits / 8), math.ceil(w.bits / 8)
        add = self.scheduler.add
        rw = add("MEM", "read", w_deps, tag + ":w", nbytes=d * m * wb)
        rx = add("MEM", "read", x_deps, tag + ":x", nbytes=n * d * G * xb)
        last = None
        for g in range(G):
            arms = min(A, m - g * A)
            for c in range(C):
                rows = min(L, d - c * L)
                mw = int(writes[g, c])
                t = add(cid, "tune", (rw,) if last is None else (rw, last), tag, tunes=1, mr_writes=mw, dac=mw)
                last = add(cid, "vvm_cycle", (t, rx), tag, cycles=n, vcsel=n * rows, dac=n * rows,
                           adc=n * arms, bpd=n * arms)
        if C > 1:
            last = self.elec("add", n * m * (C - 1), (last,), tag)
        return add("MEM", "write", (last,), tag, nbytes=n * C * m * cfg.out_bytes)


def head_attention(acc: Accelerator, xq: QuantTensor, w_q: QuantTensor, w_k: QuantTensor,
                   w_v: QuantTensor, x_deps=(), group: int = 0, tag: str = "head", gate=()):
    """One attention head on a 5-core group. Returns ``(output n x d_k, done ids, softmax id)``.

    ``gate`` holds back every weight load as well (used for non-overlapped runs).
    """
    c1, c2, c3, c4, c5 = acc.core_group(group)
    plan = decompose_qkt(xq, w_q, w_k)
    gate = tuple(gate)
    q, q_done = acc.matmul([c1], plan.x, plan.w_q, x_deps, gate, tag + ".q")
    t, t_done = acc.matmul([c2], acc.quantize(q), plan.w_kt, q_done, gate, tag + ".t")
    a, a_done = acc.matmul([c3], acc.quantize(t), plan.x_t, t_done, tuple(x_deps) + gate, tag + ".a")
    s = softmax_rows(a)
    sm = acc.elec("softmax", SOFTMAX_OPS * a.shape[0] * a.shape[1], a_done, tag + ".softmax")
    v_gate = (sm,) if acc.options.defer_value_stage else ()
    v, v_done = acc.matmul([c5], plan.x, w_v, tuple(x_deps) + v_gate, v_gate + gate, tag + ".v")
    sq, vq = acc.quantize(s), acc.quantize(v)
    if acc.options.softmax_as_weights:
        o_t, o_done = acc.matmul([c4], vq.T, sq.T, v_done, (sm,), tag + ".o")
        o = o_t.T
    else:
        o, o_done = acc.matmul([c4], sq, vq, (sm,), v_done, tag + ".o")
    return o, o_done, sm


def encoder_block(acc: Accelerator, x: np.ndarray, bw, config: ViTConfig, x_deps=(), tag: str = "b"):
    """Pre-norm block: ``x + MHSA(LN(x))`` then ``+ FFN(LN(.))``. Returns ``(x', done ids)``."""
    n, d_m = x.shape
    h = layernorm(x, bw.ln1_g, bw.ln1_b, config.ln_eps)
    ln1 = acc.elec("layernorm", LAYERNORM_OPS * n * d_m, x_deps, tag + ".ln1")
    hq = acc.quantize(h)
    outs, head_done = [], []
    for i in range(config.heads):
        o, done, _ = head_attention(acc, hq, bw.w_q[i], bw.w_k[i], bw.w_v[i], (ln1,),
                                    group=i % acc.options.core_groups, tag=f"{tag}.h{i}")
        outs.append(o)
        head_done.extend(done)
    cat = np.concatenate(outs, axis=1) if acc.functional else np.broadcast_to(0.0, (n, d_m))
    proj, p_done = acc.matmul(acc.all_cores, acc.quantize(cat), bw.w_o, head_done, (), tag + ".proj")
    x1 = x + proj
    r1 = acc.elec("add", ADD_OPS * n * d_m, p_done, tag + ".res1")
    h2 = layernorm(x1, bw.ln2_g, bw.ln2_b, config.ln_eps)
    ln2 = acc.elec("layernorm", LAYERNORM_OPS * n * d_m, (r1,), tag + ".ln2")
    f1, f1_done = acc.matmul(acc.all_cores, acc.quantize(h2), bw.w_1, (ln2,), (), tag + ".ffn1")
    g = gelu(f1, config.gelu_form)
    ge = acc.elec("gelu", GELU_OPS * f1.shape[0] * f1.shape[1], f1_done, tag + ".gelu")
    f2, f2_done = acc.matmul(acc.all_cores, acc.quantize(g), bw.w_2, (ge,), (), tag + ".ffn2")
    x2 = x1 + f2
    r2 = acc.elec("add", ADD_OPS * n * d_m, f2_done, tag + ".res2")
    return x2, [r2]


def embed(acc: Accelerator, model: ViTModel, patches: np.ndarray, positions: np.ndarray, deps=()):
    """Optical patch embedding, class token, electronic position-embedding add."""
    c = model.config
    e, e_done = acc.matmul(acc.all_cores, acc.quantize(patches), model.patch_embed, deps, (), "embed")
    rows = np.concatenate([[0], positions + 1])
    if acc.functional:
        x = np.vstack([model.cls_token[None, :], e]) + model.pos_embed[rows]
    else:
        x = np.broadcast_to(0.0, (len(rows), c.d_m))
    done = acc.elec("add", ADD_OPS * len(rows) * c.d_m, e_done, "embed.pos")
    return x, [done]


def vit_forward(acc: Accelerator, model: ViTModel, patches: np.ndarray, positions=None, mask=None,
                deps=()):
    """Full inference for one frame. Returns ``(logits, trace)``.

    ``patches`` holds kept patch rows; ``positions`` gives their original patch
    indices (default: all patches in order). A boolean ``mask`` over the full
    patch grid may be given instead, in which case ``patches`` is the full grid.
    """
    c = model.config
    patches = np.asarray(patches, dtype=np.float64)
    if mask is not None:
        keep = np.flatnonzero(np.asarray(getattr(mask, "bits", mask), dtype=bool))
        if patches.shape[0] != c.n_patches:
            raise ValueError("a mask needs the full patch grid as input")
        patches, positions = patches[keep], keep
    if positions is None:
        positions = np.arange(patches.shape[0])
    positions = np.asarray(positions, dtype=np.int64)
    if patches.shape[0] > c.n_patches:
        raise ValueError(f"sequence of {patches.shape[0]} patches exceeds configured {c.n_patches}")
    if len(positions) != patches.shape[0]:
        raise ValueError("positions and patches disagree in length")
    if patches.shape[0] and patches.shape[1] != c.patch_dim:
        raise ValueError(f"patch vectors have length {patches.shape[1]}, expected {c.patch_dim}")
    if patches.shape[0] == 0:
        # class token only: nothing to embed optically
        x = (model.cls_token + model.pos_embed[0])[None, :]
        x_deps = [acc.elec("add", ADD_OPS * c.d_m, deps, "embed.pos")]
    else:
        x, x_deps = embed(acc, model, patches, positions, deps)
    for i, bw in enumerate(model.blocks):
        x, x_deps = encoder_block(acc, x, bw, c, x_deps, tag=f"b{i}")
    cls = layernorm(x[0], model.norm_g, model.norm_b, c.ln_eps)
    ln = acc.elec("layernorm", LAYERNORM_OPS * c.d_m, x_deps, "final.ln")
    logits = cls @ dequantize(model.head) if acc.functional else np.zeros(c.n_classes)
    acc.elec("matmul", c.d_m * c.n_classes, (ln,), "final.head")
    return logits, acc.trace


def schedule_pipeline(plans: Sequence, cost_table: CostTable = DEFAULT_COST_TABLE,
                      core_config: OpticalCoreConfig | None = None,
                      options: PipelineOptions | None = None, overlap: bool = True) -> ScheduleTrace:
    """Schedule a stream of attention heads (one per plan) on one 5-core group.

    With ``overlap`` the next input's C1-C3 tuning may start as soon as those
    cores are free; without it each input waits for the previous one to finish.
    """
    if not plans:
        raise ValueError("need at least one plan")
    acc = Accelerator(core_config, cost_table, options, functional=False)
    acc.scheduler.trace.metadata["overlap_inputs"] = overlap
    prev: tuple = ()
    for i, p in enumerate(plans):
        bits = acc.options.act_bits
        xq = QuantTensor(np.broadcast_to(np.int8(0), (p.n, p.d_m)), 1.0, bits)
        w = QuantTensor(np.broadcast_to(np.int8(0), (p.d_m, p.d_k)), 1.0, bits)
        _, done, _ = head_attention(acc, xq, w, w, w, prev, tag=f"in{i}", gate=prev)
        if not overlap:
            prev = tuple(done)
    return acc.trace


def completion_times(trace: ScheduleTrace, prefix: str = "in") -> list[float]:
    """Finish time of each input in a :func:`schedule_pipeline` trace, in input order."""
    ends: dict[int, float] = {}
    for e in trace.events:
        head = e.tag.split(".", 1)[0]
        if head.startswith(prefix) and head[len(prefix):].isdigit():
            i = int(head[len(prefix):])
            ends[i] = max(ends.get(i, 0.0), e.end)
    return [ends[i] for i in sorted(ends)]


def initiation_interval(trace: ScheduleTrace, warmup: int = 1) -> float:
    """Mean gap between successive input completions after ``warmup`` inputs."""
    t = completion_times(trace)[warmup:]
    if len(t) < 2:
        raise ValueError("need at least two inputs past warm-up")
    return (t[-1] - t[0]) / (len(t) - 1)
