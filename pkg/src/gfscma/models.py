"""Activity-detection networks.

Three model kinds share one LSTM detector body:

``proposed_daudn``
    UAEN extracts per-CTU activity priors ``alpha`` from the data symbols; the
    detector sees ``[alpha, realify(y_p)]``.
``paudn``
    Preamble only: the detector sees ``realify(y_p)``.
``conventional_daudn``
    One network for both: the detector sees ``[realify(y_p), realify(y_0), ...]``.

The detector embeds its input to ``10*N_R`` units with a dense layer, feeds that
same vector to ``S`` chained LSTM cells (zero initial state, separate weights per
cell) and maps the last cell output through a dense layer and a sigmoid.
"""

from __future__ import annotations

import copy
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .neural import functional as F
from .neural.engine import Parameter, Tensor, no_grad
from .streams import INIT, Stream

PROPOSED = "proposed_daudn"
PAUDN = "paudn"
CONVENTIONAL = "conventional_daudn"
KINDS = (PROPOSED, PAUDN, CONVENTIONAL)
DEFAULT_THRESHOLD = 0.5
DEFAULT_CELLS = 10


@dataclass(frozen=True)
class UaenSpec:
    n_kernel_1: int
    n_kernel_2: int
    N_d: int
    K: int
    N_R: int

    def __post_init__(self):
        if not self.n_kernel_1 > self.n_kernel_2 > 0:
            raise ValueError(
                f"UAEN needs n_kernel_1 > n_kernel_2 > 0, got {self.n_kernel_1}, {self.n_kernel_2}"
            )

    @classmethod
    def default(cls, N_R: int, N_d: int = 16, K: int = 4) -> "UaenSpec":
        return cls(10 * N_R, 2 * N_R, N_d, K, N_R)


@dataclass(frozen=True)
class AudnSpec:
    hidden: int
    cells: int
    input_dim: int
    N_R: int
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.cells < 1:
            raise ValueError("the detector needs at least one LSTM cell")
        if self.hidden != 10 * self.N_R:
            raise ValueError(f"hidden size must be 10*N_R={10 * self.N_R}, got {self.hidden}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold {self.threshold} outside (0, 1)")


def input_dim(kind: str, N_R: int, N_ZC: int, K: int, N_d: int) -> int:
    if kind == PROPOSED:
        return N_R + 2 * N_ZC
    if kind == PAUDN:
        return 2 * N_ZC
    if kind == CONVENTIONAL:
        return 2 * N_ZC + N_d * 2 * K
    raise ValueError(f"unknown model kind {kind!r}")


def _bn_shapes(prefix: str, C: int) -> dict:
    return {f"{prefix}.gamma": (C,), f"{prefix}.beta": (C,)}


def uaen_shapes(spec: UaenSpec) -> "OrderedDict[str, tuple]":
    n1, n2, D = spec.n_kernel_1, spec.n_kernel_2, 2 * spec.K
    s = OrderedDict()
    s["uaen.conv1.kernels"] = (n1, D)
    s["uaen.conv1.bias"] = (n1,)
    s.update(_bn_shapes("uaen.bn1", n1))
    s["uaen.conv2.kernels"] = (n2, n1)
    s["uaen.conv2.bias"] = (n2,)
    s.update(_bn_shapes("uaen.bn2", n2))
    s["uaen.dense1.weight"] = (spec.N_R, spec.N_d * n2)
    s["uaen.dense1.bias"] = (spec.N_R,)
    s.update(_bn_shapes("uaen.bn3", spec.N_R))
    s["uaen.dense2.weight"] = (spec.N_R, spec.N_R)
    s["uaen.dense2.bias"] = (spec.N_R,)
    return s


def audn_shapes(spec: AudnSpec) -> "OrderedDict[str, tuple]":
    H = spec.hidden
    s = OrderedDict()
    s["audn.embed.weight"] = (H, spec.input_dim)
    s["audn.embed.bias"] = (H,)
    for c in range(spec.cells):
        for g in F.GATES:
            s[f"audn.cell{c}.W_{g}"] = (H, H)
        for g in F.GATES:
            s[f"audn.cell{c}.U_{g}"] = (H, H)
        for g in F.GATES:
            s[f"audn.cell{c}.b_{g}"] = (H,)
    s["audn.head.weight"] = (spec.N_R, H)
    s["audn.head.bias"] = (spec.N_R,)
    return s


def _init_value(name: str, shape: tuple, seed: int, dtype) -> np.ndarray:
    role = name.rsplit(".", 1)[1]
    if role == "gamma":
        return np.ones(shape, dtype)
    if role in ("beta", "bias") or role.startswith("b_"):
        return np.zeros(shape, dtype)
    rng = Stream(seed).child(INIT, name).generator()
    return F.fan_in_uniform(rng, shape, shape[1], dtype)


@dataclass
class ModelBundle:
    kind: str
    N_R: int
    N_ZC: int
    K: int
    N_d: int
    audn: AudnSpec
    uaen: UaenSpec | None = None
    seed: int = 0
    params: "OrderedDict[str, Parameter]" = field(default_factory=OrderedDict)
    buffers: dict = field(default_factory=dict)
    stage: str = "init"
    pretrained: bool = False
    meta: dict = field(default_factory=dict)

    # ------------------------------------------------------------ structure

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def spec_dict(self) -> dict:
        return {
            "kind": self.kind, "N_R": self.N_R, "N_ZC": self.N_ZC, "K": self.K, "N_d": self.N_d,
            "audn": asdict(self.audn), "uaen": None if self.uaen is None else asdict(self.uaen),
        }

    def component_params(self, component: str) -> list[Parameter]:
        return [p for n, p in self.params.items() if n.startswith(component + ".")]

    def astype(self, dtype) -> "ModelBundle":
        """Deep copy with parameters and running statistics cast to ``dtype``."""
        out = copy.deepcopy(self)
        for p in out.params.values():
            p.data = p.data.astype(dtype)
            p.zero_grad()
        for st in out.buffers.values():
            for k in st:
                st[k] = st[k].astype(dtype)
        return out

    # ------------------------------------------------------------ forward

    def _p(self, name: str) -> Parameter:
        return self.params[name]

    def _bn(self, x: Tensor, name: str, training: bool) -> Tensor:
        return F.batchnorm(x, self._p(f"{name}.gamma"), self._p(f"{name}.beta"),
                           self.buffers[name], training)

    def uaen_forward(self, x_d, training: bool = False) -> Tensor:
        """Per-CTU activity priors from realified data symbols ``(B, N_d, 2K)``."""
        if self.uaen is None:
            raise ValueError(f"model kind {self.kind!r} has no UAEN")
        x = self._input(x_d)
        if x.shape[1:] != (self.N_d, 2 * self.K):
            raise ValueError(f"UAEN input must be (B, {self.N_d}, {2 * self.K}), got {x.shape}")
        a2 = self._bn(F.relu(F.conv1d_full(x, self._p("uaen.conv1.kernels"), self._p("uaen.conv1.bias"))),
                      "uaen.bn1", training)
        a1 = self._bn(F.relu(F.conv1d_full(a2, self._p("uaen.conv2.kernels"), self._p("uaen.conv2.bias"))),
                      "uaen.bn2", training)
        flat = F.reshape(a1, (x.shape[0], self.N_d * self.uaen.n_kernel_2))
        e = self._bn(F.relu(F.dense(flat, self._p("uaen.dense1.weight"), self._p("uaen.dense1.bias"))),
                     "uaen.bn3", training)
        return F.sigmoid(F.dense(e, self._p("uaen.dense2.weight"), self._p("uaen.dense2.bias")))

    def detector_forward(self, inp) -> Tensor:
        """The LSTM body applied to an already-assembled input vector."""
        inp = self._input(inp)
        if inp.shape[-1] != self.audn.input_dim:
            raise ValueError(f"detector input must have {self.audn.input_dim} features, got {inp.shape[-1]}")
        z = F.dense(inp, self._p("audn.embed.weight"), self._p("audn.embed.bias"))
        o = c = None
        for s in range(self.audn.cells):
            cell = {f"{r}_{g}": self._p(f"audn.cell{s}.{r}_{g}") for r in "WUb" for g in F.GATES}
            o, c = F.lstm_cell(z, o, c, cell)
        return F.sigmoid(F.dense(o, self._p("audn.head.weight"), self._p("audn.head.bias")))

    def audn_forward(self, alpha, x_p) -> Tensor:
        """Detector of the proposed model: input ``[alpha, realify(y_p)]``."""
        alpha = self._input(alpha)
        x_p = self._input(x_p)
        if alpha.shape[-1] != self.N_R or x_p.shape[-1] != 2 * self.N_ZC:
            raise ValueError("audn_forward: expected alpha of length N_R and x_p of length 2*N_ZC")
        return self.detector_forward(F.concat([alpha, x_p], axis=-1))

    def forward(self, x_p, x_d=None, training: bool = False) -> Tensor:
        """Activity probabilities ``eta_hat`` of shape ``(B, N_R)``."""
        x_p = self._input(x_p)
        if x_p.shape[-1] != 2 * self.N_ZC:
            raise ValueError(f"preamble input must have {2 * self.N_ZC} features, got {x_p.shape[-1]}")
        if self.kind == PAUDN:
            return self.detector_forward(x_p)
        if x_d is None:
            raise ValueError(f"model kind {self.kind!r} needs data symbols")
        if self.kind == PROPOSED:
            return self.audn_forward(self.uaen_forward(x_d, training), x_p)
        x_d = self._input(x_d)
        if x_d.shape[1:] != (self.N_d, 2 * self.K):
            raise ValueError(f"data input must be (B, {self.N_d}, {2 * self.K}), got {x_d.shape}")
        flat = x_d.data.reshape(x_d.shape[0], -1)
        return self.detector_forward(F.concat([x_p, Tensor(flat)], axis=-1))

    def _input(self, x) -> Tensor:
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=self.dtype))

    def predict(self, x_p, x_d=None, batch: int = 2000) -> np.ndarray:
        """Inference-mode ``eta_hat`` as a numpy array, evaluated in chunks."""
        out = []
        with no_grad():
            for lo in range(0, len(x_p), batch):
                xd = None if x_d is None else x_d[lo:lo + batch]
                out.append(self.forward(x_p[lo:lo + batch], xd, training=False).data)
        return np.concatenate(out) if out else np.zeros((0, self.N_R), self.dtype)


def build_bundle(kind: str, N_R: int, N_ZC: int, K: int = 4, N_d: int = 16,
                 cells: int = DEFAULT_CELLS, threshold: float = DEFAULT_THRESHOLD,
                 uaen: UaenSpec | None = None, seed: int = 0, dtype=np.float32) -> ModelBundle:
    """Fresh, seeded model. ``uaen`` defaults to ``10*N_R`` / ``2*N_R`` kernels."""
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    audn = AudnSpec(10 * N_R, cells, input_dim(kind, N_R, N_ZC, K, N_d), N_R, threshold)
    if kind == PROPOSED:
        uaen = uaen or UaenSpec.default(N_R, N_d, K)
        if (uaen.N_R, uaen.N_d, uaen.K) != (N_R, N_d, K):
            raise ValueError("UAEN spec dimensions do not match the model")
    else:
        uaen = None
    return _materialize(kind, N_R, N_ZC, K, N_d, audn, uaen, seed, dtype)


def _materialize(kind, N_R, N_ZC, K, N_d, audn, uaen, seed, dtype, values=None, buffers=None):
    shapes = OrderedDict()
    if uaen is not None:
        shapes.update(uaen_shapes(uaen))
    shapes.update(audn_shapes(audn))
    params = OrderedDict()
    for name, shape in shapes.items():
        v = _init_value(name, shape, seed, dtype) if values is None else values[name]
        params[name] = Parameter(np.asarray(v, dtype=dtype), name=name)
    if buffers is None:
        buffers = {}
        for name in shapes:
            if name.endswith(".gamma"):
                C = shapes[name][0]
                buffers[name[: -len(".gamma")]] = {
                    "running_mean": np.zeros(C, dtype), "running_var": np.ones(C, dtype)}
    return ModelBundle(kind, N_R, N_ZC, K, N_d, audn, uaen, seed, params, buffers)


def decide(eta: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Hard decisions: CTU ``n`` is active iff ``eta[n] > threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold {threshold} outside (0, 1)")
    return (np.asarray(eta) > threshold).astype(np.uint8)


def shape_count(shapes) -> int:
    return int(sum(np.prod(s) for s in shapes.values()))


def parameter_count(bundle: ModelBundle) -> dict:
    """Trainable parameter totals per component (batch-norm scale/shift included)."""
    u = sum(p.data.size for p in bundle.component_params("uaen"))
    a = sum(p.data.size for p in bundle.component_params("audn"))
    return {"uaen": u, "audn": a, "total": u + a, "ratio": (u / a) if a else float("nan")}


def parameter_count_for(N_R: int, N_ZC: int, K: int = 4, N_d: int = 16,
                        cells: int = DEFAULT_CELLS) -> dict:
    """Same report as :func:`parameter_count` for the proposed model, without allocating it."""
    u = shape_count(uaen_shapes(UaenSpec.default(N_R, N_d, K)))
    a = shape_count(audn_shapes(AudnSpec(10 * N_R, cells, input_dim(PROPOSED, N_R, N_ZC, K, N_d), N_R)))
    return {"uaen": u, "audn": a, "total": u + a, "ratio": u / a}
