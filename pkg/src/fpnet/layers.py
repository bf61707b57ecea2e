"""Layer specs, the forward pass, and single-pass network fitting.

Tensor conventions
------------------
dense input   : any array with leading sample axis; flattened to (N, d) in
                C order before use.
conv1d input  : (N, C, T)
conv2d input  : (N, C, H, W)
conv output   : (N, out_channels, *spatial'), "valid" windows only, no padding.

Window matrices produced by ``extract_windows`` have one row per
(sample, position) pair, sample-major then raster position order, and
columns ordered channel-major: all kernel offsets of channel 0, then
channel 1, and so on.
"""

from dataclasses import dataclass

import numpy as np

from . import accounting
from .core import (HIDDEN_LAMBDA, OUTPUT_LAMBDA, GramAccumulator, RidgeConfig,
                   TargetGenSpec, apply_g, fit_weights, generate_targets,
                   iterative_update, ridge_solve)
from .linalg import SeededRng, as_matrix, ensure_finite, gaussian_matrix

LAYER_KINDS = ("dense", "conv1d", "conv2d", "global_avg_pool", "output")
ACTIVATIONS = ("relu", "sign", "tanh", "identity", "mod2", "square")


def activate(kind, z):
    """Element-wise activation. sign maps 0 to exactly 0; mod2 wraps into [0, 2)."""
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sign":
        return np.sign(z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "identity":
        return z
    if kind == "mod2":
        return np.mod(z, 2.0)
    if kind == "square":
        return np.square(z)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one layer.

    Trainable kinds (dense, conv1d, conv2d) need ``target`` to be fitted;
    pooling and output layers must not carry one. The output layer fits a
    ridge from activations to one-hot labels with an unpenalised intercept
    and emits raw scores.
    """

    kind: str
    out_channels: int = 0
    kernel: tuple = (1,)
    stride: int = 1
    activation: str = "identity"
    target: TargetGenSpec | None = None
    ridge: RidgeConfig | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"kind must be one of {LAYER_KINDS}, got {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        kernel = self.kernel
        if isinstance(kernel, int):
            kernel = (kernel,)
        kernel = tuple(int(k) for k in kernel)
        object.__setattr__(self, "kernel", kernel)
        if any(k < 1 for k in kernel):
            raise ValueError(f"kernel entries must be >= 1, got {kernel}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.kind == "conv1d" and len(kernel) != 1:
            raise ValueError("conv1d takes a single kernel length")
        if self.kind == "conv2d" and len(kernel) != 2:
            raise ValueError("conv2d takes a (k1, k2) kernel")
        if self.kind in ("global_avg_pool", "output"):
            if self.target is not None:
                raise ValueError(f"{self.kind} layers do not take target specs")
            if self.activation != "identity":
                raise ValueError(f"{self.kind} layers apply no activation")
        elif self.out_channels < 1:
            raise ValueError(f"{self.kind} layer needs out_channels >= 1")

    def effective_ridge(self):
        if self.ridge is not None:
            return self.ridge
        lam = OUTPUT_LAMBDA if self.kind == "output" else HIDDEN_LAMBDA
        return RidgeConfig(lam=lam)


@dataclass
class TrainedLayer:
    """A spec plus whatever matrices fitting produced.

    w is (in_dim, out_channels) for hidden layers ((C * prod(kernel),
    out_channels) for conv) and (d + 1, label_dim) for the output layer,
    whose final row is the intercept. q and u are the frozen projections
    used to generate this layer's targets; pooling layers hold none of it.
    """

    spec: LayerSpec
    w: np.ndarray | None = None
    q: np.ndarray | None = None
    u: np.ndarray | None = None


@dataclass
class Network:
    layers: list
    label_dim: int
    class_names: list

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network has no layers")
        kinds = [tl.spec.kind for tl in self.layers]
        if kinds.count("output") != 1 or kinds[-1] != "output":
            raise ValueError("network needs exactly one output layer, last")
        if len(self.class_names) != self.label_dim:
            raise ValueError("class_names length must equal label_dim")


def conv_output_shape(spatial, kernel, stride):
    """Valid-window output grid for given input spatial dims."""
    out = []
    for s, k in zip(spatial, kernel):
        if k > s:
            raise ValueError(f"kernel {k} exceeds input extent {s}")
        out.append((s - k) // stride + 1)
    return tuple(out)


def extract_windows(x, kernel, stride=1):
    """Flatten all valid convolution windows into a matrix.

    x : (N, C, T) or (N, C, H, W).
    Returns (N * P, C * prod(kernel)) where P is the number of window
    positions; see the module docstring for row and column ordering.
    """
    x = np.asarray(x, dtype=np.float64)
    if isinstance(kernel, int):
        kernel = (kernel,)
    kernel = tuple(int(k) for k in kernel)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if x.ndim == 3:
        if len(kernel) != 1:
            raise ValueError("1-D input takes a single kernel length")
        (k,) = kernel
        conv_output_shape(x.shape[2:], kernel, stride)
        v = np.lib.stride_tricks.sliding_window_view(x, k, axis=2)
        v = v[:, :, ::stride]                    # (N, C, P, k)
        v = v.transpose(0, 2, 1, 3)              # (N, P, C, k)
        n, p = v.shape[0], v.shape[1]
        return v.reshape(n * p, x.shape[1] * k).astype(np.float64, copy=False)
    if x.ndim == 4:
        if len(kernel) != 2:
            raise ValueError("2-D input takes a (k1, k2) kernel")
        k1, k2 = kernel
        conv_output_shape(x.shape[2:], kernel, stride)
        v = np.lib.stride_tricks.sliding_window_view(x, (k1, k2), axis=(2, 3))
        v = v[:, :, ::stride, ::stride]          # (N, C, P1, P2, k1, k2)
        v = v.transpose(0, 2, 3, 1, 4, 5)        # (N, P1, P2, C, k1, k2)
        n, p1, p2 = v.shape[0], v.shape[1], v.shape[2]
        return v.reshape(n * p1 * p2, x.shape[1] * k1 * k2).astype(
            np.float64, copy=False)
    raise ValueError(f"expected 3-D or 4-D input, got ndim={x.ndim}")


def _flatten(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError("input needs a leading sample axis")
    return x.reshape(x.shape[0], -1)


def potentials(layer, x):
    """Pre-activation potentials of a trained hidden layer.

    dense : (N, out_channels) matrix.
    conv  : (N, out_channels, *spatial') tensor.
    """
    spec = layer.spec
    if layer.w is None:
        raise ValueError(f"{spec.kind} layer has no weights")
    if spec.kind == "dense":
        a = _flatten(x)
        if a.shape[1] != layer.w.shape[0]:
            raise ValueError(
                f"input width {a.shape[1]} does not match weights "
                f"{layer.w.shape[0]}")
        accounting.add_macs("forward", accounting.matmul_macs(
            a.shape[0], a.shape[1], layer.w.shape[1]))
        return a @ layer.w
    if spec.kind in ("conv1d", "conv2d"):
        x = np.asarray(x, dtype=np.float64)
        rows = extract_windows(x, spec.kernel, spec.stride)
        if rows.shape[1] != layer.w.shape[0]:
            raise ValueError(
                f"window width {rows.shape[1]} does not match weights "
                f"{layer.w.shape[0]}")
        out_spatial = conv_output_shape(x.shape[2:], spec.kernel, spec.stride)
        accounting.add_macs("forward", accounting.matmul_macs(
            rows.shape[0], rows.shape[1], layer.w.shape[1]))
        z = rows @ layer.w
        z = z.reshape(x.shape[0], *out_spatial, layer.w.shape[1])
        return np.moveaxis(z, -1, 1)
    raise ValueError(f"{spec.kind} layers have no potentials")


def forward(layer, x):
    """Apply one trained layer to a batch."""
    spec = layer.spec
    if spec.kind in ("dense", "conv1d", "conv2d"):
        return activate(spec.activation, potentials(layer, x))
    if spec.kind == "global_avg_pool":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 3:
            raise ValueError("pooling expects (N, C, *spatial) input")
        return x.mean(axis=tuple(range(2, x.ndim)))
    if spec.kind == "output":
        a = _flatten(x)
        w = layer.w
        if w is None:
            raise ValueError("output layer has no weights")
        if w.shape[0] == a.shape[1] + 1:
            a = np.hstack([a, np.ones((a.shape[0], 1))])
        elif w.shape[0] != a.shape[1]:
            raise ValueError(
                f"input width {a.shape[1]} does not match weights {w.shape[0]}")
        accounting.add_macs("forward", accounting.matmul_macs(
            a.shape[0], a.shape[1], w.shape[1]))
        return a @ w
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def _stream_factory(stream):
    """Accept either a zero-argument callable or a re-iterable of batches."""
    if callable(stream):
        return stream
    batches = stream if isinstance(stream, (list, tuple)) else list(stream)
    return lambda: iter(batches)


def _layer_rows(spec, x_batch, y_batch):
    """Per-row design matrix and aligned labels for one batch.

    Conv layers contribute one row per window position, all sharing the
    sample's label row.
    """
    y = as_matrix(y_batch, "y_batch")
    if spec.kind == "dense":
        return _flatten(x_batch), y
    rows = extract_windows(np.asarray(x_batch, dtype=np.float64),
                           spec.kernel, spec.stride)
    per_sample = rows.shape[0] // y.shape[0]
    return rows, np.repeat(y, per_sample, axis=0)


def _draw_projections(spec, in_dim, label_dim):
    tgt = spec.target
    if tgt is None:
        raise ValueError(f"{spec.kind} layer has no target generation spec")
    q = gaussian_matrix(in_dim, spec.out_channels, SeededRng(tgt.q_seed))
    u = gaussian_matrix(label_dim, spec.out_channels, SeededRng(tgt.u_seed))
    return q, u


def fit_layer(spec, stream, q=None, u=None):
    """Fit one hidden layer in a single pass over a batch stream.

    stream : zero-argument callable producing an iterator of
        (activations, labels) batch pairs, or a re-iterable of them.
    q, u : explicit projections; by default both are drawn from the
        layer's target seeds on the first batch.

    Targets for every batch are generated with the layer's frozen q and u,
    Gram sums are accumulated, and the weights are solved once at the end.
    """
    if spec.kind not in ("dense", "conv1d", "conv2d"):
        raise ValueError(f"fit_layer handles trainable hidden layers, not {spec.kind}")
    factory = _stream_factory(stream)
    acc = None
    for x_batch, y_batch in factory():
        rows, y_rows = _layer_rows(spec, x_batch, y_batch)
        if acc is None:
            if q is None or u is None:
                q, u = _draw_projections(spec, rows.shape[1], y_rows.shape[1])
            acc = GramAccumulator(rows.shape[1], spec.out_channels)
        ztil = generate_targets(rows, y_rows, q, u, spec.target)
        acc.update(rows, ztil)
        accounting.note_matrices(acc.ata, acc.atz, q, u, rows, ztil)
    if acc is None:
        raise ValueError("stream produced no batches")
    w = fit_weights(acc, spec.effective_ridge())
    return TrainedLayer(spec, w=w, q=q, u=u)


def _fit_layer_iterative(spec, factory, cfg):
    q = u = w = None
    lam = spec.effective_ridge().lam
    for _ in range(cfg.epochs):
        for x_batch, y_batch in factory():
            rows, y_rows = _layer_rows(spec, x_batch, y_batch)
            if w is None:
                q, u = _draw_projections(spec, rows.shape[1], y_rows.shape[1])
                w = np.zeros((rows.shape[1], spec.out_channels))
            ztil = generate_targets(rows, y_rows, q, u, spec.target)
            w = iterative_update(w, rows, ztil, cfg.eta, lam)
    if w is None:
        raise ValueError("stream produced no batches")
    return TrainedLayer(spec, w=w, q=q, u=u)


def _output_penalty(d):
    # unit penalty on every weight row, none on the trailing intercept row
    p = np.ones(d + 1)
    p[d] = 0.0
    return p


def fit_output_layer(spec, stream):
    """Ridge from flattened activations (plus intercept) to one-hot labels.

    The intercept column is appended inside and its row is left out of the
    ridge penalty, so shifting all activations by a constant moves only
    the intercept.
    """
    if spec.kind != "output":
        raise ValueError(f"expected an output spec, got {spec.kind}")
    factory = _stream_factory(stream)
    acc = None
    for x_batch, y_batch in factory():
        a = _flatten(x_batch)
        y = as_matrix(y_batch, "y_batch")
        a1 = np.hstack([a, np.ones((a.shape[0], 1))])
        if acc is None:
            acc = GramAccumulator(a1.shape[1], y.shape[1])
        acc.update(a1, y)
    if acc is None:
        raise ValueError("stream produced no batches")
    cfg = spec.effective_ridge()
    d = acc.ata.shape[0] - 1
    w = ridge_solve(acc.ata, acc.atz, cfg.lam, tau=cfg.tau,
                    penalty_diag=_output_penalty(d))
    return TrainedLayer(spec, w=w)


def _fit_output_iterative(spec, factory, cfg):
    lam = spec.effective_ridge().lam
    w = None
    for _ in range(cfg.epochs):
        for x_batch, y_batch in factory():
            a = _flatten(x_batch)
            y = as_matrix(y_batch, "y_batch")
            a1 = np.hstack([a, np.ones((a.shape[0], 1))])
            if w is None:
                w = np.zeros((a1.shape[1], y.shape[1]))
            b = a1.shape[0]
            grad = (2.0 / b) * (a1.T @ (a1 @ w - y))
            grad += (2.0 / b) * lam * (_output_penalty(a.shape[1])[:, None] * w)
            w = ensure_finite(w - cfg.eta * grad, "updated output weights")
    if w is None:
        raise ValueError("stream produced no batches")
    return TrainedLayer(spec, w=w)


@dataclass(frozen=True)
class IterativeConfig:
    """Mini-batch gradient training of the same per-layer objectives.

    Layers are still fitted strictly one at a time, in order; only the
    per-layer solver changes from closed form to gradient steps.
    """

    eta: float = 1e-3
    epochs: int = 5
    batch: int = 128

    def __post_init__(self):
        if self.eta <= 0 or not np.isfinite(self.eta):
            raise ValueError("eta must be positive")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be >= 1")


def _dataset_xy(dataset):
    if hasattr(dataset, "x") and hasattr(dataset, "y"):
        names = list(getattr(dataset, "class_names", []))
        return np.asarray(dataset.x, dtype=np.float64), as_matrix(dataset.y, "y"), names
    x, y = dataset
    return np.asarray(x, dtype=np.float64), as_matrix(y, "y"), []


def make_batches(x, y, batch_size):
    """Factory over contiguous (x, y) slices in stored order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("x and y disagree on sample count")

    def factory():
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            yield x[start:stop], y[start:stop]

    return factory


def fit_network(specs, dataset, mode="closed_form", batch_size=256):
    """Fit a whole network layer by layer, front to back.

    Each trainable layer consumes exactly one pass over the data in
    closed-form mode (``IterativeConfig.epochs`` passes in iterative mode),
    with earlier layers already frozen and applied on the fly. No error
    signal ever flows backward.

    dataset : anything with .x / .y / .class_names, or an (x, y) pair.
    mode : "closed_form" or an IterativeConfig.
    """
    specs = list(specs)
    kinds = [s.kind for s in specs]
    if kinds.count("output") != 1 or kinds[-1] != "output":
        raise ValueError("specs must contain exactly one output layer, last")
    iterative = isinstance(mode, IterativeConfig)
    if not iterative and mode != "closed_form":
        raise ValueError(f"unknown mode {mode!r}")
    x, y, class_names = _dataset_xy(dataset)
    if iterative:
        batch_size = mode.batch
    raw = make_batches(x, y, batch_size)
    if not class_names:
        class_names = [str(i) for i in range(y.shape[1])]

    trained = []
    for spec in specs:
        prefix = list(trained)

        def stream(prefix=prefix):
            for xb, yb in raw():
                ab = xb
                for tl in prefix:
                    ab = forward(tl, ab)
                yield ab, yb

        if spec.kind == "global_avg_pool":
            trained.append(TrainedLayer(spec))
        elif spec.kind == "output":
            trained.append(_fit_output_iterative(spec, stream, mode)
                           if iterative else fit_output_layer(spec, stream))
        else:
            trained.append(_fit_layer_iterative(spec, stream, mode)
                           if iterative else fit_layer(spec, stream))
    return Network(trained, label_dim=y.shape[1], class_names=class_names)


def network_forward(net, x, upto=None):
    """Activations after the first ``upto`` layers (all layers if None)."""
    a = np.asarray(x, dtype=np.float64)
    layers = net.layers if upto is None else net.layers[:upto]
    for tl in layers:
        a = forward(tl, a)
    return a


def predict(net, x):
    """Raw output scores and argmax labels (ties resolve to the lowest index)."""
    scores = network_forward(net, x)
    return scores, np.argmax(scores, axis=1)
