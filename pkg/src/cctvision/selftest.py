"""Built-in verification suite: finite-difference gradient checks for every
differentiable kernel and for a tiny end-to-end model, plus closed-form
oracles for sequence pooling, CLAHE, the evaluation metrics, and the loss.
The CLI ``selftest`` subcommand prints one line per check; the acceptance
tests reuse the same entry points."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import metrics as ME
from . import model as M
from . import tensor as T
from .preprocess import ClaheParams, ImageU8, clahe, global_equalize
from .tensor import Tensor


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


TINY = M.CctConfig(input_channels=1, input_size=8, conv_blocks=1,
                   embed_dim=8, encoder_layers=1, heads=2, dropout=0.0,
                   num_classes=2, precision=64)

GRAD_TOL = 1e-4


def _rand(shape, seed, scale=1.0):
    return np.random.default_rng(seed).normal(0.0, scale, shape)


def _kernel_cases():
    """(name, f, x) triples — f maps a Tensor to a scalar Tensor."""
    rng = np.random.default_rng(0)
    a = Tensor(_rand((3, 4), 1))
    b = Tensor(_rand((3, 4), 2))
    m = Tensor(_rand((4, 5), 3))
    gain = Tensor(_rand(5, 4, 0.3) + 1.0)
    bias = Tensor(_rand(5, 5, 0.3))
    w = Tensor(_rand((3, 2, 3, 3), 6, 0.5))
    labels = np.array([0, 2, 1])
    weights = Tensor(_rand((3, 4), 7))

    def drop_rng():
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(99)))

    return [
        ("add", lambda x: T.tsum(T.mul(T.add(x, b), weights)), Tensor(a.data.copy(), requires_grad=True)),
        ("sub", lambda x: T.tsum(T.mul(T.sub(x, b), weights)), Tensor(a.data.copy(), requires_grad=True)),
        ("mul", lambda x: T.tsum(T.mul(T.mul(x, b), weights)), Tensor(a.data.copy(), requires_grad=True)),
        ("reshape", lambda x: T.tsum(T.mul(x.reshape((4, 3)),
                                           Tensor(_rand((4, 3), 8)))),
         Tensor(a.data.copy(), requires_grad=True)),
        ("transpose", lambda x: T.tsum(T.mul(T.transpose(x, (1, 0)),
                                             Tensor(_rand((4, 3), 9)))),
         Tensor(a.data.copy(), requires_grad=True)),
        ("sum", lambda x: T.tsum(T.mul(T.tsum(x, axis=1), Tensor(_rand(3, 10)))),
         Tensor(a.data.copy(), requires_grad=True)),
        ("mean", lambda x: T.tsum(T.mul(T.tmean(x, axis=0), Tensor(_rand(4, 11)))),
         Tensor(a.data.copy(), requires_grad=True)),
        ("relu", lambda x: T.tsum(T.mul(T.relu(x), weights)), Tensor(a.data.copy(), requires_grad=True)),
        ("gelu", lambda x: T.tsum(T.mul(T.gelu(x), weights)), Tensor(a.data.copy(), requires_grad=True)),
        ("softmax", lambda x: T.tsum(T.mul(T.softmax(x, axis=1), weights)),
         Tensor(a.data.copy(), requires_grad=True)),
        ("layernorm", lambda x: T.tsum(T.mul(
            T.layernorm(x, gain, bias), Tensor(_rand((6, 5), 12)))),
         Tensor(_rand((6, 5), 13), requires_grad=True)),
        ("matmul", lambda x: T.tsum(T.mul(T.matmul(x, m), Tensor(_rand((3, 5), 14)))),
         Tensor(a.data.copy(), requires_grad=True)),
        ("conv2d", lambda x: T.tsum(T.mul(
            T.conv2d(x, w, stride=1, padding=1), Tensor(_rand((2, 3, 6, 6), 15)))),
         Tensor(_rand((2, 2, 6, 6), 16), requires_grad=True)),
        ("maxpool2d", lambda x: T.tsum(T.mul(
            T.maxpool2d(x, window=2, stride=2), Tensor(_rand((1, 2, 3, 3), 17)))),
         Tensor(_rand((1, 2, 6, 6), 18), requires_grad=True)),
        ("dropout", lambda x: T.tsum(T.mul(
            T.dropout(x, 0.3, drop_rng()), weights)), Tensor(a.data.copy(), requires_grad=True)),
        ("cross_entropy", lambda x: T.cross_entropy_with_logits(x, labels),
         Tensor(_rand((3, 3), 19), requires_grad=True)),
    ]


def check_kernel_gradients() -> list[CheckResult]:
    out = []
    for name, f, x in _kernel_cases():
        t0 = time.perf_counter()
        rep = T.grad_check(f, x, tol=GRAD_TOL)
        out.append(CheckResult(
            name=f"grad/{name}", passed=rep.passed(GRAD_TOL),
            detail=f"max rel err {rep.max_rel_err:.2e} "
                   f"({rep.checked} checked, {rep.skipped} near kinks)",
            seconds=time.perf_counter() - t0))
    return out


def check_model_gradients(cfg: M.CctConfig = TINY, seed: int = 0) -> list[CheckResult]:
    """Gradient-check the full tiny model with respect to every parameter
    tensor and the input image."""
    params = M.init_params(cfg, seed)
    x = Tensor(_rand((2, cfg.input_channels, cfg.input_size, cfg.input_size), 20, 0.5))
    labels = np.array([0, 1])

    def loss_fn(_ignored):
        res = M.forward(Tensor(x.data), params, cfg, training=False)
        return T.cross_entropy_with_logits(res.logits, labels)

    out = []
    for name in params.names():
        t0 = time.perf_counter()
        rep = T.grad_check(loss_fn, params[name], tol=GRAD_TOL)
        out.append(CheckResult(
            name=f"grad/model.{name}", passed=rep.passed(GRAD_TOL),
            detail=f"max rel err {rep.max_rel_err:.2e} ({rep.checked} checked)",
            seconds=time.perf_counter() - t0))

    def loss_of_input(xv):
        res = M.forward(xv, params, cfg, training=False)
        return T.cross_entropy_with_logits(res.logits, labels)

    t0 = time.perf_counter()
    rep = T.grad_check(loss_of_input, Tensor(x.data.copy(), requires_grad=True), tol=GRAD_TOL)
    out.append(CheckResult(
        name="grad/model.input", passed=rep.passed(GRAD_TOL),
        detail=f"max rel err {rep.max_rel_err:.2e} ({rep.checked} checked, "
               f"{rep.skipped} near kinks)",
        seconds=time.perf_counter() - t0))
    return out


def check_seq_pool(trials: int = 200, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    ok, worst = True, 0.0
    for _ in range(trials):
        b, s, d = 2, int(rng.integers(2, 9)), int(rng.integers(2, 9))
        z = Tensor(rng.normal(size=(b, s, d)))
        g = Tensor(rng.normal(size=(d, 1)))
        pooled, w = M.seq_pool(z, g)
        sums = w.data.sum(axis=1)
        worst = max(worst, float(np.abs(sums - 1.0).max()))
        if w.data.min() < 0 or np.abs(sums - 1.0).max() > 1e-9:
            ok = False
        hull_lo = z.data.min(axis=1) - 1e-9
        hull_hi = z.data.max(axis=1) + 1e-9
        if np.any(pooled.data < hull_lo) or np.any(pooled.data > hull_hi):
            ok = False
    # hand case: scores (1, 0) -> softmax (0.7311, 0.2689)
    z = Tensor(np.array([[[1.0], [0.0]]]))
    g = Tensor(np.array([[1.0]]))
    _, w = M.seq_pool(z, g)
    hand = np.array([0.7311, 0.2689])
    hand_err = float(np.abs(w.data[0] - hand).max())
    ok = ok and hand_err < 1e-4
    return CheckResult(
        name="oracle/seq_pool", passed=ok,
        detail=f"{trials} draws, worst sum dev {worst:.1e}, hand case err {hand_err:.1e}",
        seconds=time.perf_counter() - t0)


def _global_equalize_oracle(gray: np.ndarray) -> np.ndarray:
    """Per-pixel brute force: midpoint CDF of the full-image histogram."""
    n = gray.size
    out = np.empty_like(gray)
    flat = gray.reshape(-1)
    for v in np.unique(flat):
        below = int((flat < v).sum())
        at = int((flat == v).sum())
        mid = below + at / 2.0
        out[gray == v] = int(np.clip(np.floor(mid * 255.0 / n + 0.5), 0, 255))
    return out


def check_clahe(images: int = 10, seed: int = 0) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(images):
        gray = rng.integers(0, 256, (24, 24), dtype=np.uint8)
        single = clahe(ImageU8(gray[:, :, None]),
                       ClaheParams(tiles_x=1, tiles_y=1, clip_limit=1e18))
        if not np.array_equal(single.data[:, :, 0], _global_equalize_oracle(gray)):
            ok = False
        ge = global_equalize(ImageU8(gray[:, :, None]))
        if not np.array_equal(ge.data, single.data):
            ok = False
    # constant image maps to itself within +-1
    const = ImageU8(np.full((16, 16, 1), 77, dtype=np.uint8))
    eq = clahe(const, ClaheParams(tiles_x=2, tiles_y=2))
    const_ok = np.abs(eq.data.astype(int) - 77).max() <= 1
    return CheckResult(
        name="oracle/clahe", passed=ok and bool(const_ok),
        detail=f"{images} random images vs per-pixel equalization, constant +-1",
        seconds=time.perf_counter() - t0)


def _brute_force_metrics(truth, pred, n):
    conf = np.zeros((n, n), dtype=int)
    for t, p in zip(truth, pred):
        conf[t, p] += 1
    prec, rec, f1 = np.zeros(n), np.zeros(n), np.zeros(n)
    for c in range(n):
        tp = conf[c, c]
        pp = conf[:, c].sum()
        ap = conf[c, :].sum()
        prec[c] = tp / pp if pp else 0.0
        rec[c] = tp / ap if ap else 0.0
        denom = prec[c] + rec[c]
        f1[c] = 2 * prec[c] * rec[c] / denom if denom else 0.0
    acc = np.trace(conf) / conf.sum()
    return conf, prec, rec, f1, acc


def check_metrics(instances: int = 200, seed: int = 0, tol: float = 1e-12) -> CheckResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst, ok = 0.0, True
    import warnings
    for _ in range(instances):
        n = int(rng.integers(2, 6))
        m = int(rng.integers(1, 40))
        truth = rng.integers(0, n, m)
        pred = rng.integers(0, n, m)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = ME.evaluate(truth, pred, n)
        conf, prec, rec, f1, acc = _brute_force_metrics(truth, pred, n)
        if not np.array_equal(rep.confusion, conf):
            ok = False
        for c in range(n):
            worst = max(worst,
                        abs(rep.per_class[c].precision - prec[c]),
                        abs(rep.per_class[c].recall - rec[c]),
                        abs(rep.per_class[c].f1 - f1[c]))
        worst = max(worst, abs(rep.accuracy - acc),
                    abs(rep.accuracy + rep.hamming_loss - 1.0))
        if worst > tol:
            ok = False
    return CheckResult(
        name="oracle/metrics", passed=ok,
        detail=f"{instances} instances vs brute force, worst dev {worst:.1e}",
        seconds=time.perf_counter() - t0)


def check_cross_entropy() -> CheckResult:
    t0 = time.perf_counter()
    loss = T.cross_entropy_with_logits(Tensor(np.zeros((4, 2))), [0, 1, 0, 1])
    ln2_err = abs(loss.item() - np.log(2.0))
    # gradient formula (softmax - onehot) / B against finite differences
    rng = np.random.default_rng(21)
    logits = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    labels = np.array([2, 0, 3])
    rep = T.grad_check(lambda x: T.cross_entropy_with_logits(x, labels),
                       logits, tol=1e-6)
    sm = np.exp(logits.data - logits.data.max(axis=1, keepdims=True))
    sm /= sm.sum(axis=1, keepdims=True)
    onehot = np.eye(4)[labels]
    logits.grad = None
    T.backward(T.cross_entropy_with_logits(logits, labels))
    closed_err = float(np.abs(logits.grad - (sm - onehot) / 3.0).max())
    ok = ln2_err < 1e-9 and rep.passed(1e-6) and closed_err < 1e-12
    return CheckResult(
        name="oracle/cross_entropy", passed=ok,
        detail=f"ln2 err {ln2_err:.1e}, fd err {rep.max_rel_err:.1e}, "
               f"closed-form err {closed_err:.1e}",
        seconds=time.perf_counter() - t0)


def run_all() -> list[CheckResult]:
    results = check_kernel_gradients()
    results += check_model_gradients()
    results += [check_seq_pool(), check_clahe(), check_metrics(),
                check_cross_entropy()]
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL'}  "
             f"[{r.seconds:6.2f}s]  {r.detail}" for r in results]
    n_fail = sum(not r.passed for r in results)
    total = sum(r.seconds for r in results)
    lines.append(f"{len(results)} checks, {n_fail} failed, {total:.1f}s total")
    return "\n".join(lines)
