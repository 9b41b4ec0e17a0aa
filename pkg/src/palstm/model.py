"""LSTM autoencoder with mileage-conditioned, attention-gated latent fusion.

Forward pass for one batch::

    x_aug --LSTM encoder--> h_T
    m     --ReLU(W m + b)--> v
    z     = [h_T ; v] * sigmoid(W_att [h_T ; v] + b_att)
    (h0, c0) = (tanh(W_h0 z + b_h0), W_c0 z + b_c0)
    decoder LSTM on zero inputs from (h0, c0) -> x_hat_t = W_out h_t + b_out

Every function here takes a :class:`~palstm.numerics.Tape` so the same code
is used for training (recording) and for inference (``record=False``).
Parameter names are flat strings such as ``"enc0.W_fx"`` or ``"att.W"``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .features import ChannelStats, PhysicalFeatureSpec, augment
from .numerics import ParameterStore, Tape

GATES = ("f", "i", "c", "o")


@dataclass(frozen=True)
class ModelConfig:
    T: int = 256
    D: int = 4
    K: int = 2
    hidden_size: int = 64
    layers: int = 1
    use_physics_features: bool = True
    use_latent_fusion: bool = True
    use_attention: bool = True
    latent_dim: int | None = None

    def __post_init__(self):
        if self.T < 2:
            raise ValueError(f"window length T must be at least 2, got {self.T}")
        if self.hidden_size < 1 or self.layers < 1 or self.D < 1 or self.K < 0:
            raise ValueError("hidden_size, layers and D must be positive; K non-negative")
        if self.latent_dim is not None and self.latent_dim < 1:
            raise ValueError("latent_dim must be positive when set")

    @property
    def input_dim(self) -> int:
        return self.D + 2 * self.K + 1 if self.use_physics_features else self.D

    @property
    def fused_dim(self) -> int:
        return 2 * self.hidden_size if self.use_latent_fusion else self.hidden_size

    @property
    def code_dim(self) -> int:
        return self.latent_dim if self.latent_dim is not None else self.fused_dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LstmWeights:
    """Twelve gate tensors of one LSTM layer, keyed like ``W_fx``, ``W_fh``, ``b_f``."""

    tensors: dict

    def __post_init__(self):
        missing = [k for k in _lstm_keys() if k not in self.tensors]
        if missing:
            raise ValueError(f"missing LSTM tensors {missing}")
        hidden = self.tensors["b_f"].shape[0]
        for g in GATES:
            if self.tensors[f"W_{g}h"].shape != (hidden, hidden) or self.tensors[f"b_{g}"].shape != (hidden,):
                raise ValueError(f"gate {g} tensors do not conform to hidden size {hidden}")

    @classmethod
    def from_params(cls, params, prefix):
        return cls({k: params[f"{prefix}.{k}"] for k in _lstm_keys()})


@dataclass
class EncoderState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class Reconstruction:
    x_hat: np.ndarray
    score: float


def _lstm_keys():
    return [f"{kind}_{g}{suffix}" for g in GATES for kind, suffix in (("W", "x"), ("W", "h"), ("b", ""))]


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParameterStore:
    """Uniform(-1/sqrt(d_h), 1/sqrt(d_h)) weights, forget-gate biases set to 1."""
    d_h = config.hidden_size
    bound = 1.0 / np.sqrt(d_h)
    shapes = {}

    def lstm(prefix, n_in):
        for g in GATES:
            shapes[f"{prefix}.W_{g}x"] = (d_h, n_in)
            shapes[f"{prefix}.W_{g}h"] = (d_h, d_h)
            shapes[f"{prefix}.b_{g}"] = (d_h,)

    for layer in range(config.layers):
        lstm(f"enc{layer}", config.input_dim if layer == 0 else d_h)
    if config.use_latent_fusion:
        shapes["fuse.W_proj"] = (d_h, 1)
        shapes["fuse.b_proj"] = (d_h,)
    if config.use_attention:
        shapes["att.W"] = (config.fused_dim, config.fused_dim)
        shapes["att.b"] = (config.fused_dim,)
    if config.latent_dim is not None:
        shapes["lat.W"] = (config.latent_dim, config.fused_dim)
        shapes["lat.b"] = (config.latent_dim,)
    lstm("dec", config.D)
    shapes["dec.W_h0"] = (d_h, config.code_dim)
    shapes["dec.b_h0"] = (d_h,)
    shapes["dec.W_c0"] = (d_h, config.code_dim)
    shapes["dec.b_c0"] = (d_h,)
    shapes["out.W"] = (config.D, d_h)
    shapes["out.b"] = (config.D,)

    params = ParameterStore()
    for name in sorted(shapes):
        value = rng.uniform(-bound, bound, size=shapes[name])
        if name.endswith(".b_f"):
            value = np.ones(shapes[name])
        params.add(name, value)
    return params


def _sub(nodes, prefix):
    n = len(prefix) + 1
    return {k[n:]: v for k, v in nodes.items() if k.startswith(prefix + ".")}


def stacked_gates(tape: Tape, w):
    """Stack one layer's per-gate tensors (``W_fx``-style keys) in f, i, c, o row order."""
    return (
        tape.stack_rows([w[f"W_{g}x"] for g in GATES]),
        tape.stack_rows([w[f"W_{g}h"] for g in GATES]),
        tape.stack_rows([w[f"b_{g}"] for g in GATES]),
    )


def encode_nodes(tape: Tape, steps, nodes, config: ModelConfig):
    """Run the stacked encoder over a list of per-step input nodes; return the top ``h_T``."""
    H = config.hidden_size
    batch = steps[0].shape[:-1]
    seq = steps
    for layer in range(config.layers):
        gates = stacked_gates(tape, _sub(nodes, f"enc{layer}"))
        state = tape.constant(np.zeros(batch + (2 * H,)))
        states = []
        for x in seq:
            state = tape.lstm_cell(x, state, *gates)
            states.append(state)
        if layer + 1 < config.layers:
            seq = [tape.slice(st, 0, H) for st in states]
    return tape.slice(state, 0, H)


def project_nodes(tape: Tape, m, nodes):
    return tape.relu(tape.affine(nodes["fuse.W_proj"], m, nodes["fuse.b_proj"]))


def fuse_nodes(tape: Tape, h_T, v_phy, nodes, use_attention: bool):
    z = h_T if v_phy is None else tape.concat([h_T, v_phy])
    if use_attention:
        alpha = tape.sigmoid(tape.affine(nodes["att.W"], z, nodes["att.b"]))
        z = tape.mul(z, alpha)
    return z


def decode_nodes(tape: Tape, z, T: int, nodes, config: ModelConfig):
    H = config.hidden_size
    w = _sub(nodes, "dec")
    gates = stacked_gates(tape, w)
    h0 = tape.tanh(tape.affine(w["W_h0"], z, w["b_h0"]))
    c0 = tape.affine(w["W_c0"], z, w["b_c0"])
    state = tape.concat([h0, c0])
    zero = tape.constant(np.zeros(z.shape[:-1] + (config.D,)))
    out = []
    for _ in range(T):
        state = tape.lstm_cell(zero, state, *gates)
        out.append(tape.affine(nodes["out.W"], tape.slice(state, 0, H), nodes["out.b"]))
    return out


def forward_nodes(tape: Tape, nodes, inputs, mileage, config: ModelConfig):
    """Full pass for a batch; ``inputs`` is ``(B, T, input_dim)``, ``mileage`` is ``(B,)`` normalized.

    Returns the list of ``T`` reconstructed steps, each ``(B, D)``.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[2] != config.input_dim:
        raise ValueError(f"expected inputs (B, T, {config.input_dim}), got {inputs.shape}")
    T = inputs.shape[1]
    steps = [tape.constant(inputs[:, t, :]) for t in range(T)]
    h_T = encode_nodes(tape, steps, nodes, config)
    v_phy = None
    if config.use_latent_fusion:
        m = tape.constant(np.asarray(mileage, dtype=np.float64).reshape(-1, 1))
        v_phy = project_nodes(tape, m, nodes)
    z = fuse_nodes(tape, h_T, v_phy, nodes, config.use_attention)
    if config.latent_dim is not None:
        z = tape.affine(nodes["lat.W"], z, nodes["lat.b"])
    return decode_nodes(tape, z, T, nodes, config)


def batch_loss(tape: Tape, nodes, batch, config: ModelConfig):
    """Mean squared reconstruction error of normalized raw channels over a batch.

    ``batch`` is ``(inputs, mileage, targets)`` with ``targets`` shaped ``(B, T, D)``.
    """
    inputs, mileage, targets = batch
    preds = forward_nodes(tape, nodes, inputs, mileage, config)
    return tape.squared_error(preds, np.transpose(targets, (1, 0, 2)))


def model_inputs(X, mileage, stats: ChannelStats, spec: PhysicalFeatureSpec, config: ModelConfig):
    """Return ``(inputs, normalized mileage, targets)`` for raw windows ``X``."""
    targets = stats.normalize(X)
    if config.use_physics_features:
        inputs = augment(X, mileage, stats, spec)
    else:
        inputs = targets
    return inputs, stats.scale_mileage(mileage), targets


def predict_normalized(params: ParameterStore, inputs, mileage, config: ModelConfig, chunk: int = 256):
    """Reconstruct ``(N, T, D)`` normalized windows without recording gradients."""
    tape = Tape(record=False)
    nodes = {name: tape.constant(params[name]) for name in params}
    out = []
    for lo in range(0, len(inputs), chunk):
        preds = forward_nodes(tape, nodes, inputs[lo : lo + chunk], mileage[lo : lo + chunk], config)
        out.append(np.stack([p.value for p in preds], axis=1))
    return np.concatenate(out, axis=0)


def window_scores(x_hat, targets) -> np.ndarray:
    """Per-window mean squared error over all ``T * D`` entries."""
    diff = np.asarray(x_hat) - np.asarray(targets)
    return np.mean(diff * diff, axis=(1, 2))


def reconstruct(sample, params, config: ModelConfig, stats: ChannelStats, spec: PhysicalFeatureSpec) -> Reconstruction:
    """Score one :class:`~palstm.data.WindowedSample`; ``x_hat`` is in normalized units."""
    X = np.asarray(sample.values, dtype=np.float64)[None]
    inputs, m, targets = model_inputs(X, [sample.mileage], stats, spec, config)
    x_hat = predict_normalized(params, inputs, m, config)
    return Reconstruction(x_hat=x_hat[0], score=float(window_scores(x_hat, targets)[0]))


# single-sample helpers on plain arrays


def _eager(arrays):
    tape = Tape(record=False)
    return tape, {k: tape.constant(v) for k, v in arrays.items()}


def lstm_step(x_tilde, prev: EncoderState, weights: LstmWeights) -> EncoderState:
    tape, w = _eager(weights.tensors)
    state = tape.constant(np.concatenate([prev.h, prev.c]))
    out = tape.lstm_cell(tape.constant(x_tilde), state, *stacked_gates(tape, w)).value
    H = prev.h.shape[0]
    return EncoderState(h=out[:H], c=out[H:])


def encode(window, weights: LstmWeights) -> np.ndarray:
    """Final hidden state of a single-layer encoder over a ``(T, input_dim)`` window."""
    values = window.values if hasattr(window, "values") else np.asarray(window, dtype=np.float64)
    hidden = weights.tensors["b_f"].shape[0]
    state = EncoderState(np.zeros(hidden), np.zeros(hidden))
    for x in values:
        state = lstm_step(x, state, weights)
    return state.h


def project_mileage(m: float, W_proj, b_proj) -> np.ndarray:
    tape, n = _eager({"fuse.W_proj": W_proj, "fuse.b_proj": b_proj})
    return project_nodes(tape, tape.constant([m]), n).value


def fuse_latent(h_T, v_phy, W_att, b_att, use_attention: bool = True) -> np.ndarray:
    tape, n = _eager({"att.W": W_att, "att.b": b_att} if use_attention else {})
    v = None if v_phy is None else tape.constant(v_phy)
    return fuse_nodes(tape, tape.constant(h_T), v, n, use_attention).value


def decode(z_final, T: int, params, config: ModelConfig) -> np.ndarray:
    """``(T, D)`` decoder output from a single latent code; ``params`` holds ``dec.*`` and ``out.*``."""
    tape, n = _eager({k: params[k] for k in params if k.startswith(("dec.", "out."))})
    steps = decode_nodes(tape, tape.constant(z_final), T, n, config)
    return np.stack([s.value for s in steps])
