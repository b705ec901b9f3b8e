"""Reference implementations and scripted inputs shared by the unit and acceptance suites."""

import numpy as np

from streamadapt.engine import AnnotationOracle, EngineConfig, run
from streamadapt.model import Architecture, BlockSpec, Classifier
from streamadapt.signal import EventInterval, SampleBlock, WindowedStream
from streamadapt.signal import EventInterval as EI
from streamadapt.trainer import TrainConfig


# criterion number -> (passed, detail); printed again in the terminal summary
ACCEPTANCE: dict = {}
ACCEPTANCE_CRITERIA = range(1, 10)


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")


def small_arch(**kw):
    return Architecture(2, 32, [BlockSpec(4, 3, 1, 2), BlockSpec(6, 3, 1, 2),
                                BlockSpec(6, 3, 1, 2)], head_hidden=6, **kw)


def fd_gradient_check(c, x, y, eps0=1e-4, eps_min=1e-7):
    """Worst relative error between analytic and central-difference gradients.

    The step is halved until neither probe changes the network's ReLU and
    max-pool pattern, so the difference never straddles a kink. Relative
    error uses ``max(|g|, |fd|, 1e-7)`` as the denominator so that
    structurally zero coordinates compare on an absolute scale.
    """
    _, grads = c.loss_and_grad(x, y)
    base = c.activation_pattern(x)
    worst = 0.0
    unresolved = 0
    for name, p in c.params.items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            eps = eps0
            fd = None
            while eps >= eps_min:
                p[idx] = old + eps
                same = c.activation_pattern(x) == base
                lp, _ = c.loss_and_grad(x, y)
                p[idx] = old - eps
                same = same and c.activation_pattern(x) == base
                lm, _ = c.loss_and_grad(x, y)
                p[idx] = old
                if same:
                    fd = (lp - lm) / (2 * eps)
                    break
                eps /= 2
            if fd is None:
                unresolved += 1
                continue
            g = grads[name][idx]
            worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), 1e-7))
    return worst, unresolved


def brute_match(predicted, reference, cfg):
    """Quadratic reference: every pair checked, no ordering assumptions."""
    ext = [(r.start_s - cfg.pre_tolerance_s, r.end_s + cfg.post_tolerance_s) for r in reference]

    def hits(p, e):
        return p.start_s < e[1] and e[0] < p.end_s

    tp = sum(any(hits(p, e) for p in predicted) for e in ext)
    fp = sum(not any(hits(p, e) for e in ext) for p in predicted)
    return tp, fp, len(reference) - tp


def random_events(rng, n, horizon=2000):
    # integer endpoints so touching and near-touching boundaries occur often
    pts = np.sort(rng.choice(np.arange(horizon), size=2 * n, replace=False))
    return [EI(float(pts[2 * i]), float(pts[2 * i + 1])) for i in range(n)]


# -- scripted engine micro-streams --------------------------------------

MICRO_RATE = 8.0
FAST = TrainConfig(max_epochs=2, early_stop_patience=1, plateau_patience=1, lr0=1e-3)


def micro_arch():
    return Architecture(2, 32, [BlockSpec(4, 3, 1, 2)], head_hidden=4)


def micro_stream(n=200, seed=0):
    """``n`` windows of 4 s at 1 s stride with a burst in the first 20 s."""
    rng = np.random.default_rng(seed)
    total = int((n + 3) * MICRO_RATE)
    data = rng.standard_normal((2, total))
    t = np.arange(total) / MICRO_RATE
    data[:, (t >= 5) & (t < 15)] += 3 * np.sin(2 * np.pi * 2.0 * t[(t >= 5) & (t < 15)])
    block = SampleBlock(2, MICRO_RATE, data)
    ws = WindowedStream(block, 4.0, 1.0)
    assert len(ws) == n
    return ws, [EventInterval(5.0, 15.0), EventInterval(120.0, 135.0)]


def confident_model(logit0=30.0):
    c = Classifier(micro_arch(), seed=0)
    c.zero_()
    c.params["head2.bias"][:] = [logit0, -logit0]
    return c


def micro_config(strategy="episMART", **kw):
    kw.setdefault("initial_adaptation_s", 20.0)
    kw.setdefault("train", FAST)
    kw.setdefault("buffer_capacity", 64)
    return EngineConfig(strategy=strategy, **kw)


def run_micro(config, model=None, keep_models=False, seed=0):
    ws, ref = micro_stream(seed=seed)
    oracle = AnnotationOracle(ref)
    model = model or Classifier(micro_arch(), seed=1)
    return run(ws, config, oracle, model, keep_models=keep_models), oracle, ws
