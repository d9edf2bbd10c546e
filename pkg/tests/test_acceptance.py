"""Acceptance suite: one PASS/FAIL line per criterion, each with a time limit.

The status lines are printed even without ``-s``.
"""

import dataclasses
import math
import time

import numpy as np

from _oracles import ece_brute, sigma_double_pass
from cnfpreserve.bounds import lipschitz_gaps, logit_mse_sum
from cnfpreserve.datasets import (
    PairedDataset,
    gen_synthetic,
    load_paired,
    load_points,
    save_paired,
    save_points,
    split,
)
from cnfpreserve.engine import (
    STUDENT_AGGRESSIVE_DIMS,
    STUDENT_MILD_DIMS,
    TEACHER_DIMS,
    DistillConfig,
    backward,
    distill,
    export_pairs,
    init_model,
    load_model,
    save_model,
    train_teacher,
)
from cnfpreserve.metrics import audit, confidences, ece_from_arrays, sigma, verdict
from cnfpreserve.tuner import Trial, TuneGrid, is_feasible, select_best, tune
from conftest import TASK_NOISE, TEACHER_CFG, make_task
from test_engine import _fd_check


def report(capsys, name, ok, elapsed, limit, detail):
    status = "PASS" if ok and elapsed < limit else "FAIL"
    with capsys.disabled():
        print(f"\n[{status}] {name}: {detail} ({elapsed:.2f}s, limit {limit:g}s)")
    assert ok, detail
    assert elapsed < limit, f"took {elapsed:.1f}s"


# --------------------------------------------------------------------------
# AC1


REFERENCE_TASKS = ["SST-2", "RTE", "QQP", "QNLI", "MRPC", "CoLA"]
REFERENCE_TRAIN_SIGMA = {
    "S6L": [0.026, 0.062, 0.049, 0.049, 0.066, 0.059],
    "S4L": [0.055, 0.109, 0.077, 0.065, 0.054, 0.083],
}
EXPECTED_HOLDS = {
    "S6L": [True, False, True, True, False, False],
    "S4L": [False] * 6,
}


def test_ac1_reference_verdicts(capsys):
    t0 = time.perf_counter()
    got = {m: [verdict(s, 0.05) for s in values] for m, values in REFERENCE_TRAIN_SIGMA.items()}
    n_match = sum(g == e for m in got for g, e in zip(got[m], EXPECTED_HOLDS[m]))
    holds6 = [t for t, h in zip(REFERENCE_TASKS, got["S6L"]) if h]
    report(capsys, "AC1 verdicts on reference sigma values", n_match == 12, time.perf_counter() - t0, 1,
           f"{n_match}/12 match; 6-layer holds on {holds6}")


# --------------------------------------------------------------------------
# AC2


def test_ac2_sigma_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240601)
    worst = 0.0
    checked = 0
    for _ in range(1000):
        n = int(rng.integers(1, 201))
        c = int(rng.choice([2, 3, 5]))
        t = rng.normal(scale=rng.uniform(0.1, 4), size=(n, c))
        s = t + rng.normal(scale=rng.uniform(0.01, 3), size=(n, c))
        gamma = float(rng.choice([0.5, 1.0, 2.0]))
        ds = PairedDataset.from_arrays(t, s)
        tl, sl = t.tolist(), s.tolist()
        for policy in ("zero", "exclude"):
            try:
                ref = sigma_double_pass(tl, sl, gamma, policy)
            except ZeroDivisionError:
                # nothing agrees: both sides must refuse
                try:
                    sigma(ds, gamma, policy)
                    worst = math.inf
                except ValueError:
                    pass
                continue
            worst = max(worst, abs(sigma(ds, gamma, policy).sigma - ref))
            checked += 1
    report(capsys, "AC2 sigma oracle equivalence", worst <= 1e-12, time.perf_counter() - t0, 30,
           f"{checked} comparisons, max |diff| {worst:.2e}")


# --------------------------------------------------------------------------
# AC3


def test_ac3_lipschitz_chain(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    failures = 0
    total = 0
    for gamma in (0.5, 1.0, 2.0):
        for c in (2, 3, 5, 10):
            n = 2500
            a = rng.normal(scale=rng.uniform(0.1, 5), size=(n, c))
            b = a + rng.normal(scale=1.0, size=(n, c)) * rng.uniform(0.001, 3, size=(n, 1))
            soft_gap, logit_gap = lipschitz_gaps(a, b, gamma)
            failures += int(np.sum(soft_gap > logit_gap + 1e-9))
            ca, ia = confidences(a, gamma)
            cb, ib = confidences(b, gamma)
            agree = ia == ib
            failures += int(np.sum(np.abs(cb - ca)[agree] > soft_gap[agree] + 1e-9))
            total += n
    report(capsys, "AC3 Lipschitz and confidence-gap bounds", failures == 0, time.perf_counter() - t0, 30,
           f"{total // 3} pairs for each of 3 gammas, {failures} failures")


# --------------------------------------------------------------------------
# AC4


def test_ac4_sigma_below_root_mean_loss(capsys):
    t0 = time.perf_counter()
    passed = 0
    runs = []
    for task in ("blobs", "moons", "xor"):
        for seed in range(5):
            points = gen_synthetic(task, 1000, TASK_NOISE[task], seed)
            train, _ = split(points, 0.2, seed)
            teacher, _ = train_teacher(train, TEACHER_DIMS, dataclasses.replace(TEACHER_CFG, seed=seed))
            for dims in (STUDENT_MILD_DIMS, STUDENT_AGGRESSIVE_DIMS):
                student, tlog = distill(teacher, train, dims, DistillConfig(seed=seed))
                ds = export_pairs(teacher, student, train)
                loss = tlog.stage(2)[-1].sum_form_loss
                assert math.isclose(loss, logit_mse_sum(ds), rel_tol=1e-12)
                sig = sigma(ds).sigma
                bound = math.sqrt(loss / len(ds))
                passed += sig <= bound + 1e-9
                runs.append(sig / bound)
    report(capsys, "AC4 sigma <= sqrt(L/n) after distillation", passed == 30, time.perf_counter() - t0, 600,
           f"{passed}/30 runs, sigma/bound ratio max {max(runs):.3f}")


# --------------------------------------------------------------------------
# AC5


def test_ac5_gradient_check(capsys):
    t0 = time.perf_counter()
    worst = {alpha: max(_fd_check(seed, alpha) for seed in range(20)) for alpha in (0.0, 0.5, 1.0)}
    ok = all(w < 1e-4 for w in worst.values())
    report(capsys, "AC5 analytic vs finite-difference gradients", ok, time.perf_counter() - t0, 60,
           "20 seeded 2-4-2 nets, max rel err " + ", ".join(f"a={a}: {w:.1e}" for a, w in worst.items()))


# --------------------------------------------------------------------------
# AC6


# reduced grid over the desk-scaled reference lists, stage-1 search enabled
AC6_GRID = TuneGrid(
    lr_stg1=(0.05, 0.1, 0.3),
    epochs_stg1=(3, 6, 9),
    lr_stg2=(0.03, 0.07),
    batch=(28, 32),
    epochs_stg2=(4, 5, 6),
    weight_decay=(1e-4,),
    tune_stage1=True,
)


def _injected_invariant_runs(n_runs=1000):
    rng = np.random.default_rng(99)
    bad = 0
    for _ in range(n_runs):
        kappa = float(rng.uniform(0.01, 0.1))
        drop = float(rng.choice([0.0, 0.005, 0.01, 0.02]))
        base_acc = float(rng.uniform(0.5, 1.0))
        trials = []
        for i in range(int(rng.integers(1, 40))):
            s = float(rng.uniform(0, 0.15))
            a = float(np.clip(base_acc + rng.normal(scale=0.02), 0, 1))
            div = bool(rng.random() < 0.05)
            trials.append(Trial(i, DistillConfig(), s, a, a, s <= kappa and not div,
                                is_feasible(a, base_acc, drop) and not div, div))
        best = select_best(trials)
        candidates = [t for t in trials if t.feasible and t.holds and not t.diverged]
        if best is None:
            bad += bool(candidates)
        else:
            bad += not (best.sigma <= kappa and best.acc >= base_acc - drop - 1e-12 and not best.diverged)
            bad += best.sigma > min(t.sigma for t in candidates)
    return bad


def test_ac6_tuning_efficacy(capsys):
    t0 = time.perf_counter()
    teacher, train, evl = make_task("moons")
    out = tune(teacher, train, evl, STUDENT_AGGRESSIVE_DIMS, AC6_GRID, kappa=0.05, max_acc_drop=0.01)
    again = tune(teacher, train, evl, STUDENT_AGGRESSIVE_DIMS, AC6_GRID, kappa=0.05, max_acc_drop=0.01)
    default = tune(teacher, train, evl, STUDENT_AGGRESSIVE_DIMS, TuneGrid(), kappa=0.05, max_acc_drop=0.01)
    bad = _injected_invariant_runs()
    ok = (
        out.baseline_sigma > 0.05
        and out.found
        and out.best_sigma <= 0.05
        and out.best_acc >= out.baseline_acc - 0.01
        and again.to_dict() == out.to_dict()
        # frozen per seed
        and abs(out.baseline_sigma - 0.10115542116279826) < 1e-9
        and abs(out.best_sigma - 0.036876051830289004) < 1e-9
        and out.best_config == DistillConfig(lr_stg1=0.3, epochs_stg1=9, lr_stg2=0.07, batch=28, epochs_stg2=6)
        # stage-2 defaults alone hold nothing: frozen absent report
        and not default.found
        and default.to_dict()["best_config"] == "absent"
        and bad == 0
    )
    report(capsys, "AC6 tuning on moons, aggressive student", ok, time.perf_counter() - t0, 900,
           f"sigma {out.baseline_sigma:.4f} -> {out.best_sigma:.4f}, eval acc {out.baseline_acc:.3f} -> "
           f"{out.best_acc:.3f}; default stage-2 grid: absent ({default.grid_size} configs); "
           f"injected-trial violations {bad}/1000")


# --------------------------------------------------------------------------
# AC7


def test_ac7_ece(capsys):
    t0 = time.perf_counter()
    hand = ece_from_arrays([0.95, 0.95, 0.85, 0.75], [True, True, False, True], 10)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 300))
        conf = rng.uniform(0, 1, n)
        correct = rng.random(n) < rng.uniform(0, 1)
        one = ece_from_arrays(conf, correct, 1)
        worst = max(worst, abs(one - 100 * abs(correct.mean() - conf.mean())))
        worst = max(worst, abs(ece_from_arrays(conf, correct, 10) - ece_brute(conf.tolist(), correct.tolist(), 10)))
    ok = abs(hand - 30.0) <= 1e-9 and worst <= 1e-9
    report(capsys, "AC7 ECE", ok, time.perf_counter() - t0, 1,
           f"hand example {hand:.12f}, bins=1 and brute-force max |diff| {worst:.1e}")


# --------------------------------------------------------------------------
# AC8


def test_ac8_determinism_and_round_trips(capsys, tmp_path):
    t0 = time.perf_counter()

    def run(d):
        d.mkdir()
        pts = gen_synthetic("xor", 300, 0.5, 11)
        save_points(pts, d / "data.jsonl")
        teacher, _ = train_teacher(pts, (2, 32, 32, 2), TEACHER_CFG)
        student, tlog = distill(teacher, pts, (2, 8, 2), DistillConfig(seed=3))
        save_model(teacher, d / "teacher.json")
        save_model(student, d / "student.json")
        tlog.save(d / "log.json")
        pairs = export_pairs(teacher, student, pts)
        save_paired(pairs, d / "pairs.jsonl")
        audit(pairs).save(d / "report.json")
        return pts, teacher, student, pairs

    pts, teacher, student, pairs = run(tmp_path / "a")
    run(tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    identical = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    round_trip = (
        load_points(tmp_path / "a" / "data.jsonl") == pts
        and load_model(tmp_path / "a" / "teacher.json") == teacher
        and load_model(tmp_path / "a" / "student.json") == student
        and load_paired(tmp_path / "a" / "pairs.jsonl") == pairs
    )
    m = init_model((2, 4, 2), 0)
    grads_equal = np.array_equal(backward(m, [[1.0, 2.0]], [1]).flat(), backward(m, [[1.0, 2.0]], [1]).flat())
    ok = identical and round_trip and grads_equal
    report(capsys, "AC8 determinism and round-trips", ok, time.perf_counter() - t0, 60,
           f"{len(names)} artifacts byte-identical: {identical}; exact round-trips: {round_trip}")
