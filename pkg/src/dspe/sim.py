"""Event-count simulation of the datapath running the toy model.

Tokens stream in arrival order.  Each layer keeps one work queue per unit
(QKV projection, gate, every expert, output projection); a queue fires as an
8-lane shared-weight batch once it holds 8 tokens, and partial batches are
flushed only when nothing else can make progress.  Because experts and the
QKV projection compete for the weight buffer, weight traffic scales with the
number of batches fired, which is what MIPS skipping saves.

Per token and layer:

1. MIPS (when enabled) projects and hashes the layer input and decides, for
   the attention and gate units, whether to skip, reuse or compute.
2. Gate logits pick the top-k experts; each expert unit decides again.
3. Causal attention runs in arrival order once every earlier K/V exists.
   A skipped token points its KV slot at the reference token and reuses
   the reference's score prefix.
4. The output projection and expert outputs are combined with the residual.

Every multiply demanded by the dataflow is charged exactly once, as
executed (``macs``), skipped or reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import booth, kernels
from .arch import ArchConfig, LRUBuffer, ParameterBuffer
from .arith import backend, pe_cells, tables, to_posit
from .bn import BNModel, load_bn
from .errors import ConfigError
from .ledger import CostLedger, CostWeights
from .mblm import MblmConfig, RowSchedule, row_schedule
from .mips import DecisionKind, DecisionRecord, MipsConfig, MipsEngine, SortedWindow
from .model import ToyModel, split_qkv

FULL_PE = 16


@dataclass(frozen=True)
class Features:
    mips: bool = False
    mblm: bool = False
    dappm: bool = False
    # similarity sorter without MIPS decisions (reordering only)
    sorter: bool = False

    @property
    def numeric(self) -> str:
        return "posit8" if (self.mblm or self.dappm) else "float64"

    @property
    def use_sorter(self) -> bool:
        return self.mips or self.sorter


@dataclass
class BatchRow:
    batch_id: int
    layer: int
    matrix: str
    row: int
    path: str
    order: tuple[int, ...]
    flips: int
    replays: int
    skips: int


@dataclass
class RunResult:
    outputs: np.ndarray
    ledger: CostLedger
    weights: CostWeights
    features: Features
    decisions: list[tuple[int, DecisionRecord]]
    engines: list[MipsEngine | None]
    demanded: int
    batches_fired: int
    op_mode_counts: dict[int, int]
    batch_rows: list[BatchRow] = field(default_factory=list)
    kv_lengths: list[list[int]] = field(default_factory=list)
    layer_inputs: list[dict[int, np.ndarray]] = field(default_factory=list)

    def decision_counts(self) -> dict[str, int]:
        out = {k.value: 0 for k in DecisionKind}
        for _, r in self.decisions:
            out[r.decision.kind.value] += 1
        return out

    def mean_pe_cells(self) -> float:
        n = sum(self.op_mode_counts.values())
        return self.ledger.pe_cell_activations / n if n else 0.0

    def analytic_pe_cells(self) -> float:
        """Mean PE cells implied by the operation-mode mix."""
        n = sum(self.op_mode_counts.values())
        if not n:
            return 0.0
        return sum((4 - m) ** 2 * c for m, c in self.op_mode_counts.items()) / n


class _Layer:
    def __init__(self, index: int, n_experts: int):
        self.index = index
        self.x: dict[int, np.ndarray] = {}
        self.engine: MipsEngine | None = None
        self.window: SortedWindow | None = None
        self.queues: dict[str, list[int]] = {"qkv": [], "gate": []}
        for i in range(n_experts):
            self.queues[f"e{i}"] = []
        self.queues["o"] = []
        self.qkv: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self.qkv_src: dict[int, int] = {}
        self.attn_handle: dict[int, int] = {}
        self.logits: dict[int, np.ndarray] = {}
        self.gate_src: dict[int, int] = {}
        self.route: dict[int, tuple[list[int], np.ndarray]] = {}
        self.y: dict[tuple[int, int], np.ndarray] = {}
        self.y_src: dict[tuple[int, int], int] = {}
        self.scores: dict[int, list[np.ndarray]] = {}
        self.c: dict[int, np.ndarray] = {}
        self.a: dict[int, np.ndarray] = {}
        self.gate_wait: set[int] = set()
        self.combine_wait: set[int] = set()
        self.next_attn = 0
        self.kv_ready = 0
        self.kv_lengths: list[int] = []


class Simulator:
    def __init__(
        self,
        model: ToyModel,
        tokens: np.ndarray,
        arch: ArchConfig | None = None,
        features: Features | None = None,
        mips_config: MipsConfig | None = None,
        mblm_config: MblmConfig | None = None,
        weights: CostWeights | None = None,
        bn_model: BNModel | None = None,
    ):
        self.model = model
        self.spec = model.spec
        tokens = np.asarray(tokens, dtype=np.float64)
        if tokens.ndim != 2 or tokens.shape[1] != self.spec.d_model:
            raise ConfigError(
                f"trace of shape {tokens.shape} does not match d_model={self.spec.d_model}"
            )
        self.arch = arch or ArchConfig()
        self.arch.validate()
        self.features = features or Features()
        self.mips_config = mips_config or MipsConfig()
        self.mips_config.validate()
        self.mblm_config = mblm_config or MblmConfig()
        self.weights = weights or CostWeights()
        self.bn = bn_model if bn_model is not None else (load_bn() if self.features.mblm else None)
        self.arith = backend(self.features.numeric)
        self.posit = self.arith.name == "posit8"
        self.T = tokens.shape[0]
        self.tokens = self.arith.quantize(tokens)

        self.W = model.prepared(self.arith)
        self.Wc = [{k: to_posit(m) for k, m in L.matrices().items()} for L in self.W]
        self.ledger = CostLedger()
        led = self.ledger
        self.wbuf = LRUBuffer("weight", self.arch.weight_buffer, led)
        self.pbuf = ParameterBuffer(self.arch.parameter_buffer, led)
        self.inbuf = LRUBuffer("input", self.arch.input_buffer, led)
        self.outbuf = LRUBuffer("output", self.arch.output_buffer, led)
        self.qbuf = LRUBuffer("q", self.arch.q_sram, led)
        self.kbuf = LRUBuffer("k", self.arch.k_sram, led)
        self.vbuf = LRUBuffer("v", self.arch.v_sram, led)
        self.layers = [_Layer(i, self.spec.experts) for i in range(self.spec.n_layers)]
        for L in self.layers:
            if self.features.mips:
                L.engine = MipsEngine(self.spec.d_model, self.mips_config)
                L.window = L.engine.window
            elif self.features.sorter:
                L.window = SortedWindow(self.mips_config.window)
        self.param_keys: list[set] = []
        self.outputs = np.zeros_like(self.tokens)
        self.done = 0
        self.demanded = 0
        self.batches = 0
        self.op_modes = {0: 0, 1: 0, 2: 0}
        self.batch_rows: list[BatchRow] = []
        self._plans: dict[tuple, RowSchedule] = {}
        self._prefetched = -1

    # ---- memory helpers -------------------------------------------------

    def _prefetch(self, layer: int) -> None:
        """Parameter buffer holds gate, output projection and MIPS projection."""
        while self._prefetched < layer:
            self._prefetched += 1
            W = self.W[self._prefetched]
            params = {("gate", self._prefetched): W.w_gate.size, ("o", self._prefetched): W.w_o.size}
            if self.features.mips:
                params[("proj", self._prefetched)] = self.spec.d_model * self.mips_config.d_low
            spill = self.pbuf.load_layer(params)
            self.param_keys.append(set(params) - spill)

    def _read_weights(self, layer: int, name: str, matrix: np.ndarray) -> None:
        if any((name, layer) in h for h in self.pbuf.halves):
            self.pbuf.read((name, layer), matrix.size)
            return
        for r in range(matrix.shape[0]):
            self.wbuf.read(("w", layer, name, r), matrix.shape[1])

    def _read_x(self, layer: int, t: int) -> None:
        if layer == 0:
            self.inbuf.read(("x", 0, t), self.spec.d_model)
        else:
            self.outbuf.read(("x", layer, t), self.spec.d_model)

    # ---- arithmetic with accounting --------------------------------------

    def _count_modes(self, a_codes: np.ndarray, b_codes: np.ndarray) -> np.ndarray:
        modes = tables()["modes"]
        m = np.minimum(modes[np.asarray(a_codes, dtype=np.int64)], modes[np.asarray(b_codes, dtype=np.int64)])
        for k in (0, 1, 2):
            self.op_modes[k] += int((m == k).sum())
        return m

    def _charge_pe(self, a_codes: np.ndarray, b_codes: np.ndarray) -> None:
        """PE cells for the executed multiplies a*b (broadcast shapes)."""
        a_codes, b_codes = np.broadcast_arrays(a_codes, b_codes)
        if a_codes.size == 0:
            return
        self._count_modes(a_codes, b_codes)
        if self.features.dappm:
            self.ledger.charge(pe_cell_activations=int(pe_cells(a_codes, b_codes).sum()))
        else:
            self.ledger.charge(pe_cell_activations=FULL_PE * a_codes.size)

    def _plan(self, acts: tuple, valid: tuple) -> RowSchedule:
        key = (acts, valid)
        if key not in self._plans:
            self._plans[key] = row_schedule(acts, valid, self.mblm_config, self.bn)
        return self._plans[key]

    def _weight_matmul(self, layer: int, name: str, X: np.ndarray) -> np.ndarray:
        """One shared-weight batch: rows of X are lanes."""
        Wv = self.W[layer].matrices()[name]
        Wc = self.Wc[layer][name]
        self._read_weights(layer, name, Wv)
        n, din = X.shape
        dout = Wv.shape[1]
        self.demanded += n * din * dout
        A = to_posit(X)
        led = self.ledger
        if not self.features.mblm:
            # radix-4 Booth in arrival order, nothing skipped or replayed
            flips = booth.FLIP_TABLE[booth.RADIX4][A[:-1].astype(np.int64), A[1:].astype(np.int64)].sum()
            led.charge(
                macs=n * din * dout,
                booth_encodings=n * din * dout,
                booth_digit_flips=int(flips) * dout,
                pp_rows=booth.DIGITS[booth.RADIX4] * n * din * dout,
            )
            self._charge_pe(A[:, :, None], Wc[None, :, :])
            return self.arith.matmul(X, Wv)

        cfg = self.mblm_config
        bw = self.arch.batch_width
        w_signed = Wc.astype(np.int8).astype(np.int64)
        w_active = np.abs(w_signed) >= cfg.r_zero_wgt
        Wc_eff = np.where(w_active, Wc, 0).astype(np.int64)
        A_eff = np.zeros_like(A, dtype=np.int64)
        exec_mask = np.zeros(A.shape, dtype=bool)
        valid = tuple([True] * n + [False] * (bw - n))
        prod_val = tables()["prod_scaled"]
        approx = 0
        err = 0
        for i in range(din):
            acts = tuple(int(a) for a in A[:, i]) + (0,) * (bw - n)
            rs = self._plan(acts, valid)
            aw = int(w_active[i].sum())
            n_enc = len(rs.encoded)
            n_live = sum(1 for s in rs.source[:n] if s >= 0)
            n_rep = n_live - n_enc
            led.charge(
                macs=n_enc * aw,
                ops_reused=n_rep * aw,
                ops_skipped=(n - n_live) * aw + n * (dout - aw),
                booth_encodings=n_enc * aw,
                booth_digit_flips=rs.flips * aw,
                pp_rows=n_enc * booth.DIGITS[rs.radix] * aw,
            )
            for lane in range(n):
                src = rs.source[lane]
                if src < 0:
                    continue
                A_eff[lane, i] = acts[src]
                if src == lane:
                    exec_mask[lane, i] = True
                elif acts[src] != acts[lane]:
                    approx += aw
                    diff = prod_val[acts[src], Wc_eff[i]] - prod_val[acts[lane], Wc_eff[i]]
                    err += int(np.abs(diff[w_active[i]]).sum())
            self.batch_rows.append(
                BatchRow(
                    self.batches,
                    layer,
                    name,
                    i,
                    rs.plan.path,
                    rs.plan.chosen.order,
                    rs.flips,
                    n_rep,
                    n - n_live,
                )
            )
        if approx:
            led.charge(approx_events=approx)
            led.add_error(err / (1 << 28))
        lane_idx, row_idx = np.nonzero(exec_mask)
        a_ex = A[lane_idx, row_idx].astype(np.int64)[:, None]
        w_ex = Wc[row_idx][:, :].astype(np.int64)
        act = w_active[row_idx]
        self._charge_pe(np.broadcast_to(a_ex, w_ex.shape)[act], w_ex[act])
        return self.arith.matmul_codes(A_eff, Wc_eff)

    # ---- scheduling --------------------------------------------------------

    def _lane_order(self, L: _Layer, toks: list[int]) -> list[int]:
        if L.window is None:
            return list(toks)
        pos = {t: i for i, t in enumerate(L.window.order())}
        return sorted(toks, key=lambda t: (pos.get(t, -1), t))

    def _fire(self, L: _Layer, unit: str, toks: list[int]) -> None:
        self.batches += 1
        toks = self._lane_order(L, toks)
        l = L.index
        d, H = self.spec.d_model, self.spec.d_attn
        if unit == "o":
            for t in toks:
                self.outbuf.read(("c", l, t), H)
                self.outbuf.discard(("c", l, t))
            X = np.stack([L.c[t] for t in toks])
        else:
            for t in toks:
                self._read_x(l, t)
            X = np.stack([L.x[t] for t in toks])
        if unit == "qkv":
            Y = self._weight_matmul(l, "qkv", X)
            for t, row in zip(toks, Y):
                L.qkv[t] = split_qkv(row, H)
                self.qbuf.write(("q", l, t), H)
                self.kbuf.write(("k", l, t), H)
                self.vbuf.write(("v", l, t), H)
        elif unit == "gate":
            Y = self._weight_matmul(l, "gate", X)
            for t, row in zip(toks, Y):
                L.logits[t] = row
        elif unit == "o":
            Y = self._weight_matmul(l, "o", X)
            for t, row in zip(toks, Y):
                L.a[t] = row
                self.outbuf.write(("a", l, t), d)
        else:
            e = int(unit[1:])
            Hid = kernels.relu(self._weight_matmul(l, f"e{e}.w1", X))
            Y = self._weight_matmul(l, f"e{e}.w2", Hid)
            for t, row in zip(toks, Y):
                L.y[(e, t)] = row
                self.outbuf.write(("y", l, e, t), d)

    def _decide(self, L: _Layer, unit: str, t: int):
        """The unit's Decision, or None when the token must be computed."""
        if L.engine is None:
            return None
        dec = L.engine.decide(unit, t)
        if dec.kind is DecisionKind.FULL_COMPUTE:
            return None
        return dec

    def _arrive(self, l: int, t: int, x: np.ndarray) -> None:
        L = self.layers[l]
        self._prefetch(l)
        L.x[t] = x
        d, H, E = self.spec.d_model, self.spec.d_attn, self.spec.experts
        if L.engine is not None:
            self._read_x(l, t)
            self.ledger.charge(sram_reads=self.spec.d_model * self.mips_config.d_low)
            L.engine.observe(t, x)
        elif L.window is not None:
            L.window.insert(t, x)
        for unit, size, queue in (("attn", 3 * d * H, "qkv"), ("gate", d * E, "gate")):
            dec = self._decide(L, unit, t)
            if dec is None:
                L.queues[queue].append(t)
                continue
            src_map = L.qkv_src if unit == "attn" else L.gate_src
            src_map[t] = self._root(src_map, dec.handle)
            self.demanded += size
            if dec.kind is DecisionKind.EARLY_SKIP:
                self.ledger.charge(ops_skipped=size)
            else:
                self.ledger.charge(ops_reused=size)
            if unit == "attn":
                L.attn_handle[t] = dec.handle
        L.gate_wait.add(t)
        L.combine_wait.add(t)

    @staticmethod
    def _root(src_map: dict[int, int], t: int) -> int:
        while t in src_map and src_map[t] != t:
            t = src_map[t]
        return t

    def _qkv_of(self, L: _Layer, t: int):
        return L.qkv.get(L.qkv_src.get(t, t))

    def _route(self, L: _Layer, t: int) -> None:
        logits = L.logits[L.gate_src.get(t, t)]
        picked, w = kernels.top_k_gate(logits, self.spec.top_k, self.arith)
        keep = [(i, wi) for i, wi in zip(picked, w) if wi != 0.0]
        L.route[t] = ([i for i, _ in keep], np.array([wi for _, wi in keep]))
        size = 2 * self.spec.d_model * self.spec.d_ff
        for i, _ in keep:
            dec = self._decide(L, f"expert{i}", t)
            if dec is None:
                L.queues[f"e{i}"].append(t)
                continue
            L.y_src[(i, t)] = self._root_y(L, i, dec.handle)
            self.demanded += size
            if dec.kind is DecisionKind.EARLY_SKIP:
                self.ledger.charge(ops_skipped=size)
            else:
                self.ledger.charge(ops_reused=size)

    @staticmethod
    def _root_y(L: _Layer, i: int, t: int) -> int:
        while (i, t) in L.y_src:
            t = L.y_src[(i, t)]
        return t

    def _attend(self, L: _Layer, t: int) -> None:
        l = L.index
        H, heads, d_k = self.spec.d_attn, self.spec.heads, self.spec.d_k
        q_src = L.qkv_src.get(t, t)
        q = L.qkv[q_src][0]
        self.qbuf.read(("q", l, q_src), H)
        K = np.stack([self._qkv_of(L, j)[1] for j in range(t + 1)])
        V = np.stack([self._qkv_of(L, j)[2] for j in range(t + 1)])
        for j in range(t + 1):
            src = L.qkv_src.get(j, j)
            self.kbuf.read(("k", l, src), H)
            self.vbuf.read(("v", l, src), H)
        L.kv_lengths.append(K.shape[0])
        prefix = None
        handle = L.attn_handle.get(t)
        if handle is not None:
            prefix = L.scores[handle]
            self.ledger.charge(ops_reused=H * (handle + 1))
        c, scores, fresh = kernels.attend_heads(self.arith, q, K, V, heads, d_k, prefix)
        L.scores[t] = scores
        L.c[t] = c
        self.demanded += 2 * H * (t + 1)
        self.ledger.charge(macs=H * fresh + H * (t + 1))
        q_c, K_c, V_c = to_posit(q), to_posit(K), to_posit(V)
        for h in range(heads):
            sl = slice(h * d_k, (h + 1) * d_k)
            self._charge_pe(q_c[None, sl], K_c[t + 1 - fresh :, sl])
            p_c = to_posit(self.arith.softmax(scores[h]))
            self._charge_pe(p_c[:, None], V_c[:, sl])
        self.outbuf.write(("c", l, t), H)
        L.queues["o"].append(t)

    def _combine(self, L: _Layer, t: int) -> None:
        l = L.index
        d = self.spec.d_model
        ids, w = L.route[t]
        Y = [L.y[(i, self._root_y(L, i, t))] for i in ids]
        for i in ids:
            self.outbuf.read(("y", l, i, self._root_y(L, i, t)), d)
        self.outbuf.read(("a", l, t), d)
        self.outbuf.discard(("a", l, t))
        self._read_x(l, t)
        if ids:
            m = kernels.combine(w, np.stack(Y), self.arith)
            self.demanded += len(ids) * d
            self.ledger.charge(macs=len(ids) * d)
            self._charge_pe(to_posit(w)[:, None], to_posit(np.stack(Y)))
        else:
            m = np.zeros(d)
        out = self.arith.add(L.x[t], L.a[t], m)
        if l > 0:
            self.outbuf.discard(("x", l, t))
        self.outbuf.write(("x", l + 1, t), d)
        if l + 1 < self.spec.n_layers:
            self._arrive(l + 1, t, out)
        else:
            self.outputs[t] = out
            self.done += 1

    def _ready_y(self, L: _Layer, t: int) -> bool:
        ids, _ = L.route[t]
        return all((i, self._root_y(L, i, t)) in L.y for i in ids)

    def _pump(self) -> None:
        bw = self.arch.batch_width
        progress = True
        while progress:
            progress = False
            for L in self.layers:
                for unit, q in L.queues.items():
                    while len(q) >= bw:
                        self._fire(L, unit, q[:bw])
                        del q[:bw]
                        progress = True
                for t in sorted(L.gate_wait):
                    if L.gate_src.get(t, t) in L.logits:
                        L.gate_wait.discard(t)
                        self._route(L, t)
                        progress = True
                while L.kv_ready < self.T and L.kv_ready in L.x and self._qkv_of(L, L.kv_ready) is not None:
                    L.kv_ready += 1
                while L.next_attn < L.kv_ready:
                    self._attend(L, L.next_attn)
                    L.next_attn += 1
                    progress = True
                for t in sorted(L.combine_wait):
                    if t in L.a and t in L.route and self._ready_y(L, t):
                        L.combine_wait.discard(t)
                        self._combine(L, t)
                        progress = True

    def _flush_one(self) -> bool:
        for L in self.layers:
            for unit, q in L.queues.items():
                if q:
                    self._fire(L, unit, list(q))
                    q.clear()
                    return True
        return False

    def run(self) -> RunResult:
        for t in range(self.T):
            self._arrive(0, t, self.tokens[t])
            self._pump()
        while self.done < self.T:
            if not self._flush_one():
                raise RuntimeError("simulation stalled with work outstanding")
            self._pump()
        # only the final layer outputs leave the chip
        last = self.spec.n_layers
        self.outbuf.flush(lambda key: key[0] == "x" and key[1] == last)
        for L in self.layers:
            if L.engine is not None:
                self.ledger.charge(overhead_macs=L.engine.overhead_macs)
            if L.window is not None:
                self.ledger.charge(overhead_macs=L.window.computed * self.spec.d_model)
        decisions = [(L.index, r) for L in self.layers if L.engine for r in L.engine.records]
        return RunResult(
            self.outputs,
            self.ledger,
            self.weights,
            self.features,
            decisions,
            [L.engine for L in self.layers],
            self.demanded,
            self.batches,
            dict(self.op_modes),
            self.batch_rows,
            [L.kv_lengths for L in self.layers],
            [L.x for L in self.layers],
        )


def run_decode(
    model: ToyModel,
    tokens: np.ndarray,
    arch: ArchConfig | None = None,
    features: Features | None = None,
    mips_config: MipsConfig | None = None,
    mblm_config: MblmConfig | None = None,
    weights: CostWeights | None = None,
    bn_model: BNModel | None = None,
) -> RunResult:
    return Simulator(model, tokens, arch, features, mips_config, mblm_config, weights, bn_model).run()


def baseline_run(
    model: ToyModel,
    tokens: np.ndarray,
    arch: ArchConfig | None = None,
    weights: CostWeights | None = None,
) -> RunResult:
    """Exact full-compute pass: every multiply executed, no reuse."""
    return Simulator(model, tokens, arch, Features(), weights=weights).run()


def token_cosines(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    dots = (a * b).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where((na > 0) & (nb > 0), dots / (na * nb), np.where((na == 0) & (nb == 0), 1.0, 0.0))
    return cos
