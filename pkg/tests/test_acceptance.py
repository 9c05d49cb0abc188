"""Acceptance criteria for the full pipeline, one test per criterion.

Each test prints a PASS line once its assertions hold (run with `-s` to see
them). The heavy artifacts (trained victims, crafted noise) are shared
through session fixtures; the whole suite trains real models on the seeded
synthetic dataset (4 classes, 32x32x1, 400 train / 100 test per class) and
takes several minutes on CPU.
"""

import numpy as np
import pytest

from salm import tensor as T
from salm.baselines import craft_em
from salm.crafting import (
    BudgetConfig,
    apply_noise,
    craft_salm,
    element_count,
    sparse_mask,
    write_uedn,
)
from salm.data import gen_synth_blobs
from salm.harness import apply_filter, crop_dataset, gap_metric, mix_datasets
from salm.models import ModelSpec, TrainConfig, build_model, evaluate, train
from salm.similarity import ahash, dhash, hash_similarity, phash, ssim

# ---------------------------------------------------------------------------
# the desk instance: every heavy criterion runs on this configuration

DATA_SEED = 0
N_CLASSES = 4
HW = (32, 32)
PER_CLASS_TRAIN, PER_CLASS_TEST = 400, 100

# class-matched (per-class) noise from a deliberately undertrained source:
# the strongest, most reproducible operating point at this scale
CRAFT_BUDGET = BudgetConfig(k_percent=10.0, steps=300, pgd_steps=8, seed=0,
                            scope="per_class")
CRAFT_CFG = TrainConfig(lr0=0.01, epochs=1, batch_size=64, seed=0)
VICTIM_CFG = TrainConfig(epochs=18, batch_size=64, seed=1)
SOURCE_SPEC = ModelSpec("small_convnet", 1, HW, N_CLASSES, seed=0)
VICTIM_SPEC = ModelSpec("small_convnet", 1, HW, N_CLASSES, seed=2)
MLP_SPEC = ModelSpec("mlp", 1, HW, N_CLASSES, seed=2)


def _report(criterion: int, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion:02d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


@pytest.fixture(scope="session")
def dataset():
    return gen_synth_blobs(N_CLASSES, PER_CLASS_TRAIN, PER_CLASS_TEST, HW, seed=DATA_SEED)


@pytest.fixture(scope="session")
def clean_victim(dataset):
    train_set, test_set = dataset
    model, curve = train(build_model(VICTIM_SPEC), train_set, VICTIM_CFG, test=test_set)
    return evaluate(model, test_set), curve


@pytest.fixture(scope="session")
def salm_noise(dataset):
    train_set, _ = dataset
    return craft_salm(train_set, SOURCE_SPEC, CRAFT_BUDGET, CRAFT_CFG)


@pytest.fixture(scope="session")
def em_noise(dataset):
    train_set, _ = dataset
    return craft_em(train_set, SOURCE_SPEC, CRAFT_BUDGET, CRAFT_CFG)


@pytest.fixture(scope="session")
def poisoned_victim(dataset, salm_noise):
    train_set, test_set = dataset
    poisoned = apply_noise(train_set, salm_noise)
    model, curve = train(build_model(VICTIM_SPEC), poisoned, VICTIM_CFG, test=test_set)
    return evaluate(model, test_set), curve


@pytest.fixture(scope="session")
def em_victim(dataset, em_noise):
    train_set, test_set = dataset
    poisoned = apply_noise(train_set, em_noise)
    model, _ = train(build_model(VICTIM_SPEC), poisoned, VICTIM_CFG, test=test_set)
    return evaluate(model, test_set)


# ---------------------------------------------------------------------------
# 1. gradient correctness


def test_criterion_01_gradient_correctness():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.random((2, 1, 10, 10))
        labels = rng.integers(0, 3, 2)
        params = {
            "k1": T.Tensor(rng.normal(size=(3, 1, 3, 3)) * 0.6),
            "b1": T.Tensor(rng.normal(size=3) * 0.1),
            "k2": T.Tensor(rng.normal(size=(4, 3, 3, 3)) * 0.6),
            "b2": T.Tensor(rng.normal(size=4) * 0.1),
        }

        def forward(v):
            xt = T.Tensor(v)
            z = T.maxpool2(T.relu(T.conv2d(xt, params["k1"], params["b1"], padding=1)))
            z = T.relu(T.conv2d(z, params["k2"], params["b2"], padding=0))
            w = T.Tensor(np.ones((z.data[0].size, 3)) * 0.05, requires_grad=False)
            logits = T.dense(T.flatten(z), w, T.Tensor(np.zeros(3), requires_grad=False))
            loss, _ = T.softmax_cross_entropy(logits, labels)
            return xt, loss

        xt, loss = forward(x)
        T.backward(loss)

        def f(v):
            _, out = forward(v)
            return float(out.data)

        numeric = T.finite_diff_grad(f, x.copy(), h=1e-5)
        scale = np.maximum(np.abs(numeric), 1e-3)
        worst = max(worst, float(np.max(np.abs(xt.grad - numeric) / scale)))
    _report(1, worst < 1e-4, f"autodiff vs finite differences over 20 nets: max rel err {worst:.2e}")


# ---------------------------------------------------------------------------
# 2. constraint suite


def test_criterion_02_constraints(dataset, salm_noise):
    train_set, _ = dataset
    d = int(np.prod(train_set.image_shape))
    m = element_count(CRAFT_BUDGET.k_percent, d)
    linf = float(np.abs(salm_noise.deltas).max())
    nonzeros = (salm_noise.deltas.reshape(len(salm_noise), -1) != 0).sum(axis=1)
    ok = linf <= 8 / 255 + 1e-15 and int(nonzeros.max()) <= m

    rng = np.random.default_rng(7)
    for k in (1, 5, 10, 33, 50, 100):
        for shape in ((1, 8, 8), (3, 5, 7), (1, 32, 32)):
            grad = rng.normal(size=shape)
            mask = sparse_mask(grad, float(k))
            expect = int(np.ceil(k / 100 * grad.size))
            ok = ok and mask.kept_count == expect == int(mask.bits.sum())
            kept = np.abs(grad)[mask.bits == 1.0]
            dropped = np.abs(grad)[mask.bits == 0.0]
            if kept.size and dropped.size:
                ok = ok and kept.min() >= dropped.max() - 1e-15
    _report(2, ok, f"linf {linf:.6f} <= 8/255, l0 max {int(nonzeros.max())} <= {m}, "
                   "mask cardinality matches sort oracle for k in {1,5,10,33,50,100}")


# ---------------------------------------------------------------------------
# 3. EM equivalence


def test_criterion_03_em_equivalence(dataset, tmp_path):
    # the equivalence is config-independent; a short run keeps this fast
    train_set, _ = dataset
    budget = BudgetConfig(k_percent=10.0, steps=30, pgd_steps=2, seed=4)
    em = craft_em(train_set, SOURCE_SPEC, budget, CRAFT_CFG)
    full = craft_salm(
        train_set, SOURCE_SPEC,
        BudgetConfig(**{**budget.snapshot(), "k_percent": 100.0}), CRAFT_CFG,
    )
    pa, pb = tmp_path / "em.uedn", tmp_path / "salm100.uedn"
    write_uedn(pa, em)
    write_uedn(pb, full)
    ok = pa.read_bytes() == pb.read_bytes()
    _report(3, ok, "craft_em output is byte-identical to craft_salm(k=100)")


# ---------------------------------------------------------------------------
# 4. efficacy


def test_criterion_04_efficacy(clean_victim, poisoned_victim):
    clean_acc, _ = clean_victim
    poison_acc, _ = poisoned_victim
    drop = clean_acc - poison_acc
    ok = clean_acc >= 0.95 and poison_acc <= 0.50 and drop >= 0.45
    _report(4, ok, f"clean {clean_acc:.3f} >= 0.95, poisoned {poison_acc:.3f} <= 0.50, "
                   f"drop {drop:.3f} >= 0.45")


# ---------------------------------------------------------------------------
# 5. transfer


def test_criterion_05_transfer(dataset, salm_noise):
    train_set, test_set = dataset
    clean_model, _ = train(build_model(MLP_SPEC), train_set, VICTIM_CFG)
    clean_acc = evaluate(clean_model, test_set)
    poisoned = apply_noise(train_set, salm_noise)
    poison_model, _ = train(build_model(MLP_SPEC), poisoned, VICTIM_CFG)
    poison_acc = evaluate(poison_model, test_set)
    drop = clean_acc - poison_acc
    ok = drop >= 0.30
    _report(5, ok, f"MLP victim on convnet-crafted noise: clean {clean_acc:.3f}, "
                   f"poisoned {poison_acc:.3f}, drop {drop:.3f} >= 0.30")


# ---------------------------------------------------------------------------
# 6. k sensitivity


def test_criterion_06_k_sensitivity(dataset, clean_victim, poisoned_victim, em_victim):
    train_set, test_set = dataset
    clean_acc, _ = clean_victim
    # k=0: training on clean data with the same seeds reproduces the baseline
    model, _ = train(build_model(VICTIM_SPEC), train_set, VICTIM_CFG, test=test_set)
    k0_acc = evaluate(model, test_set)
    k10_acc, _ = poisoned_victim
    k100_acc = em_victim
    ok = k0_acc == clean_acc and abs(k10_acc - k100_acc) <= 0.15
    _report(6, ok, f"k=0 acc {k0_acc:.3f} == clean baseline, |k10 {k10_acc:.3f} - "
                   f"k100 {k100_acc:.3f}| = {abs(k10_acc - k100_acc):.3f} <= 0.15")


# ---------------------------------------------------------------------------
# 7. filter robustness


def test_criterion_07_filter_robustness(dataset, salm_noise):
    train_set, test_set = dataset
    filtered_clean = apply_filter(train_set, "mean")
    filtered_poisoned = apply_filter(apply_noise(train_set, salm_noise), "mean")
    base_model, _ = train(build_model(VICTIM_SPEC), filtered_clean, VICTIM_CFG)
    base_acc = evaluate(base_model, test_set)
    poison_model, _ = train(build_model(VICTIM_SPEC), filtered_poisoned, VICTIM_CFG)
    poison_acc = evaluate(poison_model, test_set)
    drop = base_acc - poison_acc
    ok = drop >= 0.25
    _report(7, ok, f"after 3x3 mean filter: clean-trained {base_acc:.3f}, poisoned-trained "
                   f"{poison_acc:.3f}, drop {drop:.3f} >= 0.25")


# ---------------------------------------------------------------------------
# 8. mixing


def test_criterion_08_mixing(dataset, salm_noise, clean_victim, poisoned_victim):
    train_set, test_set = dataset
    clean_acc, _ = clean_victim
    poisoned = apply_noise(train_set, salm_noise)
    mixed = mix_datasets(poisoned, train_set, 0.8, seed=11)
    model, _ = train(build_model(VICTIM_SPEC), mixed, VICTIM_CFG)
    mixed_acc = evaluate(model, test_set)
    poison_acc, _ = poisoned_victim
    ok = abs(clean_acc - mixed_acc) <= 0.10 and poison_acc <= 0.50
    _report(8, ok, f"80% poisoned: acc {mixed_acc:.3f} within 0.10 of clean {clean_acc:.3f}; "
                   f"100% poisoned {poison_acc:.3f} <= 0.50")


# ---------------------------------------------------------------------------
# 9. cropping gap


def test_criterion_09_cropping_gap(dataset, salm_noise, em_noise, clean_victim,
                                   poisoned_victim, em_victim):
    ok_paper = (
        abs(gap_metric(91.2, 81.9, 26.5, 12.7) - 4.5) <= 0.05
        and abs(gap_metric(90.9, 82.5, 14.9, 5.3) - 1.2) <= 0.05
    )

    train_set, test_set = dataset
    fraction = 0.75
    cropped_test = crop_dataset(test_set, fraction)
    cropped_spec = ModelSpec(
        "small_convnet", 1, cropped_test.image_shape[1:], N_CLASSES, seed=VICTIM_SPEC.seed
    )

    def cropped_acc(data):
        model, _ = train(build_model(cropped_spec), crop_dataset(data, fraction), VICTIM_CFG)
        return evaluate(model, cropped_test)

    clean_acc, _ = clean_victim
    salm_acc, _ = poisoned_victim
    clean_cropped = cropped_acc(train_set)
    salm_cropped = cropped_acc(apply_noise(train_set, salm_noise))
    em_cropped = cropped_acc(apply_noise(train_set, em_noise))
    salm_gap = gap_metric(clean_acc, clean_cropped, salm_acc, salm_cropped)
    em_gap = gap_metric(clean_acc, clean_cropped, em_victim, em_cropped)
    ok = ok_paper and salm_gap <= em_gap + 0.03
    _report(9, ok, f"reference gap rows reproduce (4.5, 1.2); desk gaps: sparse {salm_gap:.3f} "
                   f"<= unmasked {em_gap:.3f} + 0.03")


# ---------------------------------------------------------------------------
# 10. fidelity


def test_criterion_10_fidelity(dataset, salm_noise):
    train_set, _ = dataset
    poisoned = apply_noise(train_set, salm_noise)
    ssim_scores = []
    hash_scores = {"ahash": [], "phash": [], "dhash": []}
    fns = {"ahash": ahash, "phash": phash, "dhash": dhash}
    for i in range(len(train_set)):
        a, b = train_set.images[i], poisoned.images[i]
        ssim_scores.append(ssim(a, b) * 100.0)
        for name, fn in fns.items():
            hash_scores[name].append(hash_similarity(fn(a), fn(b)))
    mean_ssim = float(np.mean(ssim_scores))
    mean_hashes = {name: float(np.mean(v)) for name, v in hash_scores.items()}
    ok = mean_ssim >= 85.0 and all(v >= 70.0 for v in mean_hashes.values())
    _report(10, ok, f"SSIM*100 {mean_ssim:.1f} >= 85; hash similarities "
                    + ", ".join(f"{k} {v:.1f}" for k, v in mean_hashes.items()) + " all >= 70")


# ---------------------------------------------------------------------------
# 11. determinism


def test_criterion_11_determinism(tmp_path):
    from salm.cli import main

    data_dir = tmp_path / "data"
    assert main(["gen-data", "--out", str(data_dir), "--n-classes", "2",
                 "--per-class-train", "12", "--per-class-test", "4",
                 "--hw", "16", "--seed", "5"]) == 0
    noise_path = tmp_path / "noise_a" / "noise.uedn"
    artifacts = {}
    for run in ("a", "b"):
        noise_dir = tmp_path / f"noise_{run}"
        train_dir = tmp_path / f"train_{run}"
        eval_dir = tmp_path / f"eval_{run}"
        assert main(["craft", "--method", "salm", "--train", str(data_dir / "train.ueds"),
                     "--k", "10", "--steps", "6", "--epochs", "1", "--batch", "8",
                     "--seed", "3", "--out", str(noise_dir)]) == 0
        # train/eval read the first run's noise file so the two invocations
        # have identical inputs, flags, and (therefore) manifests
        assert main(["train", "--train", str(data_dir / "train.ueds"),
                     "--test", str(data_dir / "test.ueds"),
                     "--noise", str(noise_path),
                     "--epochs", "2", "--batch", "8", "--seed", "3",
                     "--out", str(train_dir)]) == 0
        assert main(["eval", "--train", str(data_dir / "train.ueds"),
                     "--test", str(data_dir / "test.ueds"),
                     "--noise", str(noise_path),
                     "--epochs", "2", "--batch", "8", "--seed", "3",
                     "--out", str(eval_dir)]) == 0
        artifacts[run] = [
            (noise_dir / "noise.uedn").read_bytes(),
            (noise_dir / "manifest.json").read_bytes(),
            (train_dir / "model.uedm").read_bytes(),
            (train_dir / "curve.csv").read_bytes(),
            (train_dir / "manifest.json").read_bytes(),
            (eval_dir / "report.json").read_bytes(),
            (eval_dir / "manifest.json").read_bytes(),
        ]
    ok = artifacts["a"] == artifacts["b"]
    _report(11, ok, "craft/train/eval artifacts byte-identical across two runs")
