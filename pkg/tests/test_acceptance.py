"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) before
asserting, so a full run lists the outcome of every criterion even when some
fail.  The dataset-backed criteria skip when the files are not present under
``ECA_DATA_DIR``.
"""

import functools
import hashlib
import itertools
import time

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from conftest import ACCEPTANCE_LINES, random_orthogonal, random_unit_rows, require_data
from eca.analysis import analytic_H, expectation_predict, model_stats
from eca.core import (
    EcaModel,
    collapse_probabilities,
    mapping_probabilities,
    mutual_exclusive_probability,
    stacked_pmf,
)
from eca.data import (
    TRAIN,
    VALIDATION,
    Dataset,
    gen_2d,
    gen_3d,
    gen_axis_clusters,
    gen_stripes,
    load_mnist,
    load_uci_csv,
    preprocess,
    save_raw,
    split,
)
from eca.ecan import (
    FoldSpec,
    _params_from_model,
    ecan_loss_and_gradients,
    evaluate_folds,
    init_ecan,
    load_ecan,
    parse_fold_spec,
    save_ecan,
    train_ecan,
)
from eca.errors import ZeroVector
from eca.generative import GecaModel, geca_objective_and_gradients, load_geca, save_geca
from eca.kernel import KernelSpec, keca_loss, keca_loss_and_gradients, load_keca, save_keca
from eca.objectives import (
    PenaltyWeights,
    analytic_gradients,
    central_difference,
    finite_difference_gradients,
    max_relative_error,
)
from eca.trainer import TrainConfig, evaluate, load_model, save_model, train
from eca.unsupervised import UecaConfig, ueca_fit


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def binarity_fraction(model):
    soft = model.ecmm().soft
    return float(np.mean(np.minimum(soft, 1.0 - soft) < 0.05))


# ---------------------------------------------------------------- artificial datasets

@functools.lru_cache(maxsize=None)
def run_2d():
    ds = preprocess(gen_2d(5000, seed=0))
    tr, va = split(ds, 0.8, seed=0)
    config = TrainConfig(epochs=200, learning_rate=1e-3, batch_size=128, seed=0,
                         weights=PenaltyWeights(xi=20.0, gamma=0.1))
    start = time.perf_counter()
    result = train(tr, config)
    return result, evaluate(va, result.model).accuracy, time.perf_counter() - start


# Up to row and column permutation: one pure eigenfeature per class plus a third
# eigenfeature that is either shared by both classes or unused.
MAPPINGS_3D = [((0, 1), (1, 0), (1, 1)), ((0, 1), (1, 0), (0, 0))]


def canonical_rows(hard):
    H = np.asarray(hard, dtype=int)
    return min(tuple(sorted(map(tuple, H[:, list(perm)]))) for perm in itertools.permutations(range(H.shape[1])))


def matches_reference_3d(hard):
    return canonical_rows(hard) in {tuple(sorted(p)) for p in MAPPINGS_3D}


@functools.lru_cache(maxsize=None)
def run_3d():
    ds = preprocess(gen_3d(5000, seed=0))
    tr, va = split(ds, 0.8, seed=0)
    config = TrainConfig(epochs=30, learning_rate=1e-2, seed=0, restarts=5,
                         weights=PenaltyWeights(xi=20.0, gamma=0.3))
    start = time.perf_counter()
    result = train(tr, config)
    return result, evaluate(va, result.model).accuracy, time.perf_counter() - start


def test_criterion_01_2d_accuracy():
    _, acc, secs = run_2d()
    ok = acc >= 0.80 and secs < 30
    record(1, ok, f"2D VECA validation accuracy {acc:.4f} (need >= 0.80), {secs:.1f} s (need < 30)")
    assert ok


def test_criterion_02_3d_accuracy_and_mapping():
    result, acc, secs = run_3d()
    hard = result.model.ecmm().hard
    pattern = matches_reference_3d(hard)
    ok = acc >= 0.93 and pattern and secs < 60
    record(2, ok, f"3D VECA validation accuracy {acc:.4f} (need >= 0.93), mapping {hard.tolist()} "
                  f"{'matches' if pattern else 'does not match'} a reference pattern, {secs:.1f} s (need < 60)")
    assert ok


def test_reference_pattern_matcher():
    assert matches_reference_3d([[1, 1], [1, 0], [0, 1]])
    assert matches_reference_3d([[0, 0], [0, 1], [1, 0]])
    assert not matches_reference_3d([[1, 0], [1, 0], [0, 1]])


# ---------------------------------------------------------------- MNIST

@functools.lru_cache(maxsize=None)
def mnist():
    ds = preprocess(load_mnist(require_data("mnist")), "divide_255")
    return ds.part(TRAIN), ds.part(VALIDATION)


@pytest.mark.slow
def test_criterion_03_mnist_aeca():
    tr, va = mnist()
    config = TrainConfig(epochs=12, learning_rate=3e-3, batch_size=128, seed=0, objective="aeca",
                         weights=PenaltyWeights(xi=1.0, gamma=0.0))
    start = time.perf_counter()
    result = train(tr, config)
    secs = time.perf_counter() - start
    acc = evaluate(va, result.model).accuracy
    ok = acc >= 0.90 and secs < 20 * 60
    record(3, ok, f"MNIST AECA validation accuracy {acc:.4f} (need >= 0.90), {secs / 60:.1f} min (target < 20)")
    assert ok


@pytest.mark.slow
def test_criterion_04_mnist_veca():
    tr, va = mnist()
    # a light l2 penalty on the relaxed mapping leaves rarely useful eigenfeatures unmapped
    config = TrainConfig(epochs=12, learning_rate=3e-3, batch_size=128, seed=0, objective="veca",
                         weights=PenaltyWeights(xi=10.0, gamma=0.0, sparsity=1e-4, sparsity_kind="l2"))
    result = train(tr, config)
    acc = evaluate(va, result.model).accuracy
    pe = int(np.count_nonzero(result.model.ecmm().hard.sum(axis=1) == 1))
    ok = acc >= 0.88 and pe < 300
    record(4, ok, f"MNIST VECA validation accuracy {acc:.4f} (need >= 0.88), {pe} pure eigenfeatures (need < 300)")
    assert ok


ECAN_VARIANTS = [
    ("quad_reduce 784 128; identity 128 128", (None, 0.93)),
    ("rect_raise 784 1024; identity 1024 1024", (0.955, 0.955)),
    ("rect_reduce 784 128; identity 128 128", (0.90, 0.93)),
]


@pytest.mark.slow
def test_criterion_05_mnist_ecan():
    tr, va = mnist()
    config = TrainConfig(epochs=12, learning_rate=1e-2, batch_size=128, seed=0, objective="aeca",
                         weights=PenaltyWeights(xi=1.0, gamma=0.0))
    parts, ok = [], True
    for text, thresholds in ECAN_VARIANTS:
        spec = [parse_fold_spec(s) for s in text.split(";")]
        try:
            accs = evaluate_folds(va, train_ecan(tr, spec, config).model)
        except ZeroVector as exc:
            # rectifiers can switch off for every unit of a sample during training
            ok = False
            parts.append(f"[{text}] training stopped: {exc}")
            continue
        for acc, need in zip(accs, thresholds):
            ok &= need is None or acc >= need
        parts.append(f"[{text}] folds " + "/".join(f"{a:.4f}" for a in accs)
                     + " need " + "/".join("-" if t is None else f"{t}" for t in thresholds))
    record(5, ok, "MNIST ECAN " + "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- Wisconsin

def wisconsin(schema, filename):
    raw = load_uci_csv(require_data("uci", filename), schema)
    return preprocess(raw, "per_feature_max", add_aux_dim=True)


def wis_run(ds, seed):
    tr, va = split(ds, 0.8, seed=seed)
    start = time.perf_counter()
    result = train(tr, TrainConfig(epochs=300, learning_rate=1e-2, seed=seed))
    return result, evaluate(va, result.model).accuracy, time.perf_counter() - start


def test_criterion_06_wisconsin():
    ds92 = wisconsin("wis1992", "breast-cancer-wisconsin.data")
    ds95 = wisconsin("wis1995", "wdbc.data")
    _, acc92, t92 = wis_run(ds92, 0)
    _, acc95, t95 = wis_run(ds95, 0)
    zero_counts = [model_stats(wis_run(ds92, s)[0].model.ecmm().hard).degeneracy[3] == 0 for s in range(5)]
    ok = acc92 >= 0.87 and acc95 >= 0.92 and t92 < 60 and t95 < 60 and any(zero_counts)
    record(6, ok, f"Wis1992 accuracy {acc92:.4f} (need >= 0.87, {t92:.1f} s); Wis1995 accuracy {acc95:.4f} "
                  f"(need >= 0.92, {t95:.1f} s); eigenvalue 3 unused in {sum(zero_counts)} of 5 seeds (need >= 1)")
    assert ok


# ---------------------------------------------------------------- gradients

def _eca_instances(l):
    for seed in range(20):
        r = np.random.default_rng(seed)
        m = int(r.integers(2, 6))
        model = EcaModel(random_orthogonal(m, r) + 0.05 * r.standard_normal((m, m)),
                         r.uniform(-1.5, 1.5, (m, l)), chi=2.0, omega=1.1)
        yield random_unit_rows(6, m, r), r.integers(0, l, 6), model


def _eca_worst(kind):
    w = PenaltyWeights(xi=0.5, gamma=0.05)
    worst = 0.0
    for X, y, model in _eca_instances(3):
        a = analytic_gradients(X, y, model, w, kind)
        n = finite_difference_gradients(X, y, model, w, kind, h=1e-6)
        worst = max(worst, max_relative_error(a.dP, n.dP, 1e-7), max_relative_error(a.dL, n.dL, 1e-7))
    return worst


def _dict_worst(grads, params, f, keys, floor=1e-7):
    worst = 0.0
    for key in keys:
        def g(v, key=key):
            p = dict(params)
            p[key] = v
            return f(p)
        worst = max(worst, max_relative_error(grads[key], central_difference(g, params[key], 1e-6), floor))
    return worst


def _ecan_worst():
    worst = 0.0
    w = PenaltyWeights(0.5, 0.05)
    for seed in range(20):
        r = np.random.default_rng(seed)
        model = init_ecan([FoldSpec("identity", 4, 4), FoldSpec("quad_reduce", 4, 3)], 2, seed=seed,
                          pi=[0.3, 0.7], chi=2.0)
        X = random_unit_rows(5, 4, r)
        y = r.integers(0, 2, 5)
        _, g = ecan_loss_and_gradients(model, X, y, w)
        params = _params_from_model(model)
        worst = max(worst, _dict_worst(g, params, lambda p: ecan_loss_and_gradients(model, X, y, w, params=p)[0], g))
    return worst


def _geca_worst():
    worst = 0.0
    w = PenaltyWeights(0.5, 0.05)
    for seed in range(20):
        r = np.random.default_rng(seed)
        m, l, n = 3, 2, 8
        X = random_unit_rows(n, m, r)
        R = r.dirichlet(np.ones(l), size=n)
        params = {"P": random_orthogonal(m, r), "L": r.uniform(-1.5, 1.5, (m, l)),
                  "mu": 0.3 * r.standard_normal((m, l)), "s": np.log(r.uniform(0.2, 0.8, (m, l))),
                  "phi": r.dirichlet(np.ones(l))}
        _, g = geca_objective_and_gradients(X, R, params, 2.0, 1.3, w, 0.5)
        f = lambda p: geca_objective_and_gradients(X, R, p, 2.0, 1.3, w, 0.5)[0]  # noqa: E731
        worst = max(worst, _dict_worst(g, params, f, ("P", "L", "mu", "s"), floor=1e-8))
    return worst


def _keca_worst():
    worst = 0.0
    w = PenaltyWeights(0.3, 0.05)
    spec = KernelSpec("rbf")
    for seed in range(20):
        r = np.random.default_rng(seed)
        X = 0.7 * r.standard_normal((5, 4))
        y = r.integers(0, 3, 5)
        model = EcaModel(0.7 * r.standard_normal((4, 4)), r.uniform(-1.5, 1.5, (4, 3)), chi=2.0, omega=1.1)
        _, g = keca_loss_and_gradients(X, y, model, spec, w)
        nP = central_difference(lambda P: keca_loss(X, y, EcaModel(P, model.L, 2.0, 1.1), spec, w), model.P, 1e-6)
        nL = central_difference(lambda L: keca_loss(X, y, EcaModel(model.P, L, 2.0, 1.1), spec, w), model.L, 1e-6)
        floor = 1e-5 * max(np.abs(g.dP).max(), np.abs(g.dL).max())
        worst = max(worst, max_relative_error(g.dP, nP, floor), max_relative_error(g.dL, nL, floor))
    return worst


def test_criterion_07_gradients():
    worst = {kind: _eca_worst(kind) for kind in ("veca", "aeca", "mse", "categorical")}
    worst.update(ecan=_ecan_worst(), geca=_geca_worst(), keca=_keca_worst())
    ok = all(v < 1e-4 for v in worst.values())
    record(7, ok, "max relative gradient error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + " (need < 1e-4)")
    assert ok


# ---------------------------------------------------------------- probability model

def test_criterion_08_probability_coherence():
    r = np.random.default_rng(8)
    collapse_err = modified_err = pmf_err = 0.0
    for _ in range(50):
        m, l = int(r.integers(2, 9)), int(r.integers(2, 6))
        P = random_orthogonal(m, r)
        X = random_unit_rows(20, m, r)
        C = collapse_probabilities(X, P)
        collapse_err = max(collapse_err, float(np.max(np.abs(C.sum(axis=1) - 1.0))))
        W = (r.random((m, l)) < 0.5).astype(float)
        W[W.sum(axis=1) == 0, r.integers(0, l)] = 1.0  # every eigenfeature mapped
        p = mapping_probabilities(C, W, "modified")
        modified_err = max(modified_err, float(np.max(np.abs(p.sum(axis=1) - 1.0))))
        pmf_err = max(pmf_err, float(np.max(np.abs(stacked_pmf(r.random(l)).sum(axis=-1) - 1.0))))
    ok = collapse_err < 1e-9 and modified_err < 1e-9 and pmf_err < 1e-12
    record(8, ok, f"collapse sum error {collapse_err:.1e}, modified sum error {modified_err:.1e} (need < 1e-9); "
                  f"PMF row error {pmf_err:.1e} (need < 1e-12)")
    assert ok


def test_criterion_09_argmax_equivalence():
    checked = mismatches = 0
    for l in (2, 3, 4):
        grid = np.linspace(0.0, 1.0, 11 if l < 4 else 7)
        for p in itertools.product(grid, repeat=l):
            p = np.array(p)
            top = p.max()
            if top == 0 or np.count_nonzero(p == top) > 1:
                continue
            exclusive = [mutual_exclusive_probability(p, c) for c in range(l)]
            checked += 1
            mismatches += int(np.argmax(p)) != int(np.argmax(exclusive))
    ok = mismatches == 0
    record(9, ok, f"{checked} grid points with a unique maximum, {mismatches} argmax mismatches (need 0)")
    assert ok


def test_criterion_10_analytic_solver():
    r = np.random.default_rng(10)
    correct = total = 0
    for _ in range(100):
        m = int(r.integers(1, 17))
        V = random_orthogonal(m, r)
        y = r.integers(0, 2 ** 4, size=m)
        pred = expectation_predict(V.T, analytic_H(V.T, y))
        correct += int(np.count_nonzero(pred == y))
        total += m
    acc = correct / total
    ok = acc == 1.0
    record(10, ok, f"expectation prediction accuracy {acc:.4f} over {total} samples (need 1.0)")
    assert ok


# ---------------------------------------------------------------- trained-model properties

def test_criterion_11_orthogonality_and_binarity():
    parts, ok = [], True
    for name, run in (("2D", run_2d), ("3D", run_3d)):
        result = run()[0]
        orth, frac = result.orthogonality, binarity_fraction(result.model)
        ok &= orth < 0.05 and frac >= 0.95
        parts.append(f"{name} orthogonality {orth:.4f}, binary fraction {frac:.2f}")
    record(11, ok, "; ".join(parts) + " (need < 0.05 and >= 0.95)")
    assert ok


def test_criterion_12_em():
    decreases = 0
    for seed in range(10):
        r = np.random.default_rng(seed)
        m, l_tilde = int(r.integers(2, 5)), int(r.integers(2, 4))
        ds = Dataset(X=random_unit_rows(60, m, r), y=None, l=0)
        h = np.array(ueca_fit(ds, l_tilde, UecaConfig(seed=seed, max_rounds=25)).elbo_history)
        decreases += int(np.any(np.diff(h) < -1e-8))
    ds = preprocess(gen_axis_clusters(150, seed=0, l=2, m=3, major=1.0, minor=0.1, center=3.0))
    ari = adjusted_rand_score(ds.y, ueca_fit(ds, 2, UecaConfig(seed=0)).assignments)
    ok = decreases == 0 and ari >= 0.9
    record(12, ok, f"{decreases} of 10 instances with an ELBO decrease (need 0); two-cluster ARI {ari:.3f} "
                   f"(need >= 0.9)")
    assert ok


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_criterion_13_serialization(tmp_path):
    r = np.random.default_rng(13)
    eca = EcaModel(r.standard_normal((4, 4)), r.standard_normal((4, 3)), chi=7.25, omega=0.3)
    save_model(eca, tmp_path / "eca.json")
    back = load_model(tmp_path / "eca.json")
    exact = np.array_equal(back.P, eca.P) and np.array_equal(back.L, eca.L)

    geca = GecaModel(eca.P, eca.L, r.standard_normal((4, 3)), r.uniform(0.1, 1, (4, 3)), [0.2, 0.3, 0.5])
    save_geca(geca, tmp_path / "geca.json")
    g2 = load_geca(tmp_path / "geca.json")
    exact &= all(np.array_equal(getattr(g2, k), getattr(geca, k)) for k in ("P", "L", "mu", "sigma", "phi"))

    save_keca(eca, KernelSpec("polynomial", 3, 0.5), tmp_path / "keca.json")
    k2, spec = load_keca(tmp_path / "keca.json")
    exact &= np.array_equal(k2.P, eca.P) and spec == KernelSpec("polynomial", 3, 0.5)

    ecan = init_ecan([FoldSpec("quad_raise", 3, 5), FoldSpec("identity", 5, 5)], 2, seed=1)
    save_ecan(ecan, tmp_path / "ecan.json")
    e2 = load_ecan(tmp_path / "ecan.json")
    for a, b in zip(ecan.folds, e2.folds):
        same_op = (a.op.weights is None and b.op.weights is None) or np.array_equal(a.op.weights, b.op.weights)
        exact &= same_op and np.array_equal(a.eca.P, b.eca.P) and np.array_equal(a.eca.L, b.eca.L)

    identical = True
    for gen in (gen_2d, gen_3d, gen_axis_clusters, gen_stripes):
        save_raw(gen(100, seed=5), tmp_path / "a.json")
        save_raw(gen(100, seed=5), tmp_path / "b.json")
        identical &= _sha(tmp_path / "a.json") == _sha(tmp_path / "b.json")
    ok = bool(exact and identical)
    record(13, ok, f"model round trips {'bit-exact' if exact else 'NOT bit-exact'}; generator output "
                   f"{'byte-identical' if identical else 'differs'} under a fixed seed")
    assert ok
