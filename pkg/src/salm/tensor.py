"""Dense float64 tensors with reverse-mode automatic differentiation.

Small define-by-run graph: every op returns a new Tensor holding the numpy
result plus closures that push gradients to its parents. The layer set is
fixed to what the classifiers need (conv2d, relu, 2x2 max-pool, dense,
softmax cross-entropy); no broadcasting beyond bias addition, explicit
shapes only. Everything runs in float64 so gradient checks can be tight.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray. ``grad`` is filled in by
    ``GradTape.backward`` (None before that). Leaf tensors (parameters,
    inputs) have no parents.
    """

    __slots__ = ("data", "grad", "_parents", "_vjp", "requires_grad")

    def __init__(
        self,
        data,
        parents: tuple = (),
        vjp: Callable | None = None,
        requires_grad: bool | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._vjp = vjp
        if requires_grad is None:
            requires_grad = (
                any(p.requires_grad for p in parents) if parents else True
            )
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, leaf={not self._parents})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def backward(self, seed: float = 1.0) -> None:
        GradTape(self).backward(seed)

    def grad_or_zeros(self) -> np.ndarray:
        """Gradient after a backward pass; zeros if this node was unused."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad


class GradTape:
    """Reverse pass over the graph that produced a scalar output.

    Holds the topological order of the recorded ops; ``backward`` visits
    each node exactly once in reverse order, accumulating gradients into
    ``Tensor.grad``. Nodes outside the graph keep ``grad`` None (read as
    zeros via ``grad_or_zeros``).
    """

    def __init__(self, output: Tensor):
        if output.data.size != 1:
            raise ValueError(
                f"backward needs a scalar output, got shape {output.data.shape}"
            )
        if not output._parents:
            raise ValueError("backward before forward: output records no operations")
        self.output = output
        self.order = self._topo_order(output)

    @staticmethod
    def _topo_order(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self, seed: float = 1.0) -> None:
        for node in self.order:
            node.grad = None
        self.output.grad = np.full_like(self.output.data, float(seed))
        for node in reversed(self.order):
            if node._vjp is None or node.grad is None:
                continue
            parent_grads = node._vjp(node.grad)
            for parent, pgrad in zip(node._parents, parent_grads):
                if pgrad is None:  # ops skip parents that opted out of grads
                    continue
                if parent.grad is None:
                    parent.grad = pgrad
                else:
                    # out-of-place: first assignment may alias another grad
                    parent.grad = parent.grad + pgrad


def backward(output: Tensor, seed: float = 1.0) -> None:
    """Run the reverse pass; gradients land on the leaves' ``.grad``."""
    GradTape(output).backward(seed)


# ---------------------------------------------------------------------------
# ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    return Tensor(a.data + b.data, (a, b), lambda g: (g, g))


def relu(x: Tensor) -> Tensor:
    return Tensor(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0),))


def flatten(x: Tensor) -> Tensor:
    n = x.data.shape[0]
    shape = x.data.shape
    return Tensor(
        x.data.reshape(n, -1), (x,), lambda g: (g.reshape(shape),)
    )


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x: (N, D) @ weight: (D, K) + bias: (K,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ValueError("dense expects 2-d input and weight")
    if x.data.shape[1] != weight.data.shape[0]:
        raise ValueError(
            f"dense shape mismatch: input {x.data.shape} vs weight {weight.data.shape}"
        )
    if bias.data.shape != (weight.data.shape[1],):
        raise ValueError(f"dense bias shape {bias.data.shape} != ({weight.data.shape[1]},)")
    out = x.data @ weight.data + bias.data

    def vjp(g):
        dx = g @ weight.data.T if x.requires_grad else None
        return (dx, x.data.T @ g, g.sum(axis=0))

    return Tensor(out, (x, weight, bias), vjp)


def _im2col(data: np.ndarray, kh: int, kw: int, pad_h: int, pad_w: int | None = None):
    """Flatten every kernel-sized window into a row: (N*Ho*Wo, C*kh*kw)."""
    if pad_w is None:
        pad_w = pad_h
    if pad_h or pad_w:
        data = np.pad(data, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    windows = sliding_window_view(data, (kh, kw), axis=(2, 3))
    n, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, (ho, wo)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, padding: int = 0) -> Tensor:
    """Cross-correlation of (N,Cin,H,W) with (Cout,Cin,kh,kw), zero padding.

    Output is (N, Cout, H+2p-kh+1, W+2p-kw+1), stride 1.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d input must be (N,C,H,W), got shape {x.data.shape}")
    if kernel.data.ndim != 4:
        raise ValueError(f"conv2d kernel must be (Cout,Cin,kh,kw), got {kernel.data.shape}")
    n, cin, h, w = x.data.shape
    cout, kcin, kh, kw = kernel.data.shape
    if kcin != cin:
        raise ValueError(f"conv2d channel mismatch: input has {cin}, kernel expects {kcin}")
    if bias.data.shape != (cout,):
        raise ValueError(f"conv2d bias shape {bias.data.shape} != ({cout},)")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(
            f"conv2d kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )

    cols, (ho, wo) = _im2col(x.data, kh, kw, padding)
    out = cols @ kernel.data.reshape(cout, -1).T + bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def vjp(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        dkernel = (gm.T @ cols).reshape(cout, cin, kh, kw)
        dbias = gm.sum(axis=0)
        if not x.requires_grad:
            return (None, dkernel, dbias)
        # col2im: scatter per-window contributions back, channel-last to
        # keep the inner adds contiguous
        dcols = (gm @ kernel.data.reshape(cout, -1)).reshape(n, ho, wo, cin, kh, kw)
        dxp = np.zeros((n, h + 2 * padding, w + 2 * padding, cin))
        for u in range(kh):
            for v in range(kw):
                dxp[:, u : u + ho, v : v + wo, :] += dcols[:, :, :, :, u, v]
        dx = dxp[:, padding : padding + h, padding : padding + w, :].transpose(0, 3, 1, 2)
        return (np.ascontiguousarray(dx), dkernel, dbias)

    return Tensor(out, (x, kernel, bias), vjp)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Odd trailing rows/columns are dropped.

    Ties route the gradient to the first maximal element in row-major
    window order, so backward is deterministic.
    """
    if x.data.ndim != 4:
        raise ValueError(f"maxpool2 input must be (N,C,H,W), got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise ValueError(f"maxpool2 needs H,W >= 2, got {h}x{w}")
    quads = (
        x.data[:, :, 0 : ho * 2 : 2, 0 : wo * 2 : 2],
        x.data[:, :, 0 : ho * 2 : 2, 1 : wo * 2 : 2],
        x.data[:, :, 1 : ho * 2 : 2, 0 : wo * 2 : 2],
        x.data[:, :, 1 : ho * 2 : 2, 1 : wo * 2 : 2],
    )
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))

    def vjp(g):
        dx = np.zeros_like(x.data)
        taken = np.zeros(out.shape, dtype=bool)
        slots = (
            dx[:, :, 0 : ho * 2 : 2, 0 : wo * 2 : 2],
            dx[:, :, 0 : ho * 2 : 2, 1 : wo * 2 : 2],
            dx[:, :, 1 : ho * 2 : 2, 0 : wo * 2 : 2],
            dx[:, :, 1 : ho * 2 : 2, 1 : wo * 2 : 2],
        )
        for quad, slot in zip(quads, slots):
            sel = (quad == out) & ~taken  # ties go to the first row-major slot
            slot += g * sel
            taken |= sel
        return (dx,)

    return Tensor(out, (x,), vjp)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy over the batch.

    Returns the scalar loss tensor and dloss/dlogits = (softmax - onehot)/N,
    whose rows sum to zero. Labels must lie in [0, K).
    """
    if logits.data.ndim != 2:
        raise ValueError(f"logits must be (N,K), got shape {logits.data.shape}")
    n, k = logits.data.shape
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise ValueError(f"labels shape {y.shape} != ({n},)")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"label out of range [0,{k}): {y.min()}..{y.max()}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logprobs = shifted - logsumexp
    loss = -logprobs[np.arange(n), y].mean()

    probs = np.exp(logprobs)
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    out = Tensor(loss, (logits,), lambda g: (g * dlogits,))
    return out, dlogits


def finite_diff_grad(f: Callable[[np.ndarray], float], point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    flat = point.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(point))
        flat[i] = orig - h
        fm = float(f(point))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
