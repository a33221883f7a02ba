"""Acceptance criteria, one test per criterion.

Each test prints a PASS/FAIL line with the measured values; the lines are
repeated in the terminal summary.
"""
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from irtforge.augment import apportion, match_centroids
from irtforge.calibrate import ItemParams, calibrate_mml, make_grid
from irtforge.cli import main
from irtforge.dataio import (ItemBank, ResponseMatrix, load_bundle, load_responses,
                             write_item_bank, write_responses)
from irtforge.evaluate import pearson, rmse, spearman
from irtforge.fpc import estimate_latent_mwu_mem
from irtforge.rasch import rasch_prob
from irtforge.report import render_experiment_report, render_wright_map
from irtforge.simulate import paper_analogue_population, simulate_population
from irtforge.workflows import group_proficiency, run_experiment

import conftest
from conftest import (TRUE_BETAS, oracle_pearson, oracle_rmse, oracle_spearman,
                      simulate)


def verdict(number, title, checks):
    ok = all(passed for _, passed in checks)
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} | " + \
        "; ".join(f"{d} [{'ok' if p else 'FAIL'}]" for d, p in checks)
    conftest.ACCEPTANCE[number] = line
    print(line)
    assert ok, line


def fixed_truth():
    return ItemParams.from_bank(ItemBank.from_difficulties(TRUE_BETAS))


def recovery(matrix):
    params = calibrate_mml(matrix).item_params
    est = params.reorder([f"q{j + 1}" for j in range(20)]).betas
    anchored = est - est.mean() + TRUE_BETAS.mean()
    return pearson(est, TRUE_BETAS), rmse(anchored, TRUE_BETAS)


def test_criterion_01_rasch_recovery():
    m = simulate(500, 0.0, 1.0, seed=7)
    start = time.perf_counter()
    cal = calibrate_mml(m, threads=1)
    elapsed = time.perf_counter() - start
    r, e = recovery(m)
    verdict(1, "Rasch recovery, N=500, seed 7", [
        (f"pearson {r:.4f} >= 0.97", r >= 0.97),
        (f"anchored rmse {e:.4f} <= 0.15", e <= 0.15),
        (f"runtime {elapsed:.2f}s < 5s", elapsed < 5.0),
        (f"converged in {cal.convergence.cycles} cycles", cal.convergence.converged),
    ])


def test_criterion_02_missingness():
    m = simulate(500, 0.0, 1.0, seed=7, missing_rate=0.3)
    share = m.n_missing / m.data.size
    r, e = recovery(m)
    verdict(2, "recovery with missing_rate 0.3", [
        (f"missing share {share:.3f}", abs(share - 0.3) < 0.02),
        (f"pearson {r:.4f} >= 0.95", r >= 0.95),
        (f"anchored rmse {e:.4f} <= 0.20", e <= 0.20),
    ])


def test_criterion_03_mwu_mem_recovery():
    m = simulate(1000, 0.4, 0.6, seed=11)
    fit = estimate_latent_mwu_mem(m, fixed_truth())
    ll = np.asarray(fit.loglik_history)
    worst = float(np.min(np.diff(ll)))
    verdict(3, "MWU-MEM recovery of N(0.4, 0.6^2), N=1000, seed 11", [
        (f"mean {fit.latent.mean:.4f} within 0.10 of 0.4", abs(fit.latent.mean - 0.4) <= 0.10),
        (f"sd {fit.latent.sd:.4f} within 0.10 of 0.6", abs(fit.latent.sd - 0.6) <= 0.10),
        (f"marginal loglik non-decreasing over {ll.size} evaluations (min step {worst:.2e})",
         worst >= -1e-9 * abs(ll[-1])),
        (f"converged in {fit.convergence.cycles} cycles", fit.convergence.converged),
    ])


def test_criterion_04_narrow_distribution_ordering():
    fixed = fixed_truth()
    narrow = estimate_latent_mwu_mem(simulate(1000, 0.0, 0.3, seed=21), fixed).latent.sd
    wide = estimate_latent_mwu_mem(simulate(1000, 0.0, 1.0, seed=22), fixed).latent.sd
    # One population at seed 0. At n=150 the gpt3.5/llama3 means (0.27 vs
    # 0.37) are within sampling reach of each other; seeds 10, 11 and 15 of
    # 0..19 fail through the draw itself, see the decisions ledger.
    spec = paper_analogue_population(seed=0)
    _, matrix = simulate_population(spec, TRUE_BETAS)
    prof = group_proficiency(matrix, fixed, make_grid(), max_cycles=2000)
    means = {s.label: s.mean for s in prof.stats}
    llm = [c for c in spec.components if c.label != "human"]
    checks = [(f"latent sd {narrow:.3f} (SD 0.3) < {wide:.3f} (SD 1.0), gap {wide - narrow:.3f} >= 0.4",
               wide - narrow >= 0.4),
              (f"lowest mean is {min(means, key=means.get)}", min(means, key=means.get) == "llama2"),
              (f"highest mean is {max(means, key=means.get)}", max(means, key=means.get) == "llama3")]
    for c in llm:
        checks.append((f"{c.label} {means[c.label]:+.3f} vs {c.mean:+.2f}",
                       abs(means[c.label] - c.mean) <= 0.15))
    verdict(4, "narrow-distribution ordering and paper-analogue means (seed 0)", checks)


def test_criterion_05_metric_oracles():
    rng = np.random.default_rng(5)
    worst = 0.0
    tied = 0
    for k in range(1000):
        n = int(rng.integers(3, 40))
        if k % 2:
            # small integer support forces tied ranks
            x = rng.integers(0, 4, n).astype(float)
            y = rng.integers(0, 4, n).astype(float)
            if np.ptp(x) == 0:
                x[0] += 1
            if np.ptp(y) == 0:
                y[0] += 1
            tied += 1
        else:
            x = rng.normal(size=n)
            y = 0.5 * x + rng.normal(size=n)
        xs, ys = x.tolist(), y.tolist()
        worst = max(worst, abs(pearson(x, y) - oracle_pearson(xs, ys)),
                    abs(spearman(x, y) - oracle_spearman(xs, ys)),
                    abs(rmse(x, y) - oracle_rmse(xs, ys)))
    verdict(5, "pearson/spearman/rmse vs brute-force oracles", [
        (f"1000 pairs ({tied} with ties), max abs diff {worst:.2e} <= 1e-12", worst <= 1e-12),
    ])


@pytest.fixture(scope="module")
def analogue_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    write_item_bank(ItemBank.from_difficulties(TRUE_BETAS), root / "bank_fixed.json")
    bank = json.loads((root / "bank_fixed.json").read_text())
    for item in bank["items"]:
        item.pop("difficulty", None)
    (root / "bank_free.json").write_text(json.dumps(bank))
    _, matrix = simulate_population(paper_analogue_population(seed=3), TRUE_BETAS)
    humans = matrix.where_source("human")
    synthetic = matrix.take(i for i, s in enumerate(matrix.sources) if s != "human")
    write_responses(humans, root / "humans.csv")
    write_responses(synthetic, root / "synthetic.csv")
    return root


def test_criterion_06_augmentation_pipeline(analogue_files):
    root = analogue_files
    out = root / "exp"
    code = main(["experiment", "--responses", str(root / "humans.csv"), "--synthetic",
                 str(root / "synthetic.csv"), "--bank", str(root / "bank_free.json"),
                 "--seed", "99", "--out", str(out)])
    manifest = json.loads((out / "manifest.json").read_text())
    sizes = {c: v["size"] for c, v in manifest["conditions"].items()}
    half = math.ceil(100 / 2)
    want = {"benchmark": 100, "exp1": half, "exp2": 2 * half, "exp3": 2 * half, "exp4": 100}
    rows = {line.split()[0]: line.split()[1:]
            for line in (out / "report.txt").read_text().splitlines()[3:8]}
    checks = [(f"exit code {code}", code == 0),
              (f"sizes {sizes}", sizes == want),
              (f"benchmark row {' '.join(rows['benchmark'])}",
               rows["benchmark"] == ["1.00", "1.00", "0.00"])]
    grid = make_grid()
    rhos = []
    for seed in range(20):
        _, m = simulate_population(paper_analogue_population(seed=1000 + seed), TRUE_BETAS)
        res = run_experiment(m.where_source("human"),
                             m.take(i for i, s in enumerate(m.sources) if s != "human"),
                             seed, grid)
        rhos.append(next(r.spearman for r in res.report.rows if r.label == "exp1"))
    checks.append((f"exp1 spearman over 20 seeds in [{min(rhos):.3f}, {max(rhos):.3f}] "
                   f"(mean {np.mean(rhos):.3f})", all(0.8 <= r <= 1.0 for r in rhos)))
    verdict(6, "augmentation pipeline end to end", checks)


def exhaustive_match(humans, synthetic):
    plan = {}
    for i, hid in enumerate(humans.respondent_ids):
        best = None
        for k, sid in enumerate(synthetic.respondent_ids):
            h, s = humans.data[i], synthetic.data[k]
            both = [j for j in range(h.size) if not (math.isnan(h[j]) or math.isnan(s[j]))]
            d = Fraction(sum(h[j] != s[j] for j in both), len(both))
            if best is None or (d, sid) < best:
                best = (d, sid)
        plan[hid] = best[1]
    return plan


def test_criterion_07_matching_and_apportionment():
    rng = np.random.default_rng(70)
    h = (rng.random((10, 8)) < 0.5).astype(float)
    s = (rng.random((30, 8)) < 0.5).astype(float)
    s[rng.random(s.shape) < 0.15] = np.nan
    s[np.isnan(s).all(axis=1), 0] = 1.0
    s[7] = s[19] = h[2]  # exact duplicates: tie at distance 0
    items = [f"q{j}" for j in range(8)]
    humans = ResponseMatrix([f"h{i:02d}" for i in range(10)], ["human"] * 10, items, h)
    sids = [f"s{k:02d}" for k in rng.permutation(30)]
    synthetic = ResponseMatrix(sids, ["llm"] * 30, items, s)
    got = {p.human_id: p.synthetic_id for p in match_centroids(humans, synthetic).pairs}
    want = exhaustive_match(humans, synthetic)
    fixtures = [({"a": 0.5, "b": 0.3, "c": 0.2}, 7, {"a": 4, "b": 2, "c": 1}),
                ({"b": 0.5, "a": 0.5}, 3, {"a": 2, "b": 1}),
                ({"x": 1 / 3, "y": 1 / 3, "z": 1 / 3}, 50, {"x": 17, "y": 17, "z": 16})]
    checks = [(f"10x30 plan equals exhaustive search ({sum(got[k] == want[k] for k in want)}/10)",
               got == want)]
    for props, n, expected in fixtures:
        res = apportion(props, n)
        checks.append((f"apportion n={n} -> {res}", res == expected))
    verdict(7, "centroid matching and largest-remainder apportionment", checks)


def test_criterion_08_determinism(analogue_files, tmp_path):
    root = analogue_files
    runs = {
        "simulate": ["simulate", "--paper-analogue", "--bank", str(root / "bank_fixed.json"),
                     "--seed", "4"],
        "calibrate": ["calibrate", "--responses", str(root / "humans.csv"),
                      "--bank", str(root / "bank_free.json")],
        "fpc": ["fpc", "--responses", str(root / "synthetic.csv"),
                "--bank", str(root / "bank_fixed.json"), "--max-cycles", "2000"],
        "experiment": ["experiment", "--responses", str(root / "humans.csv"), "--synthetic",
                       str(root / "synthetic.csv"), "--bank", str(root / "bank_free.json"),
                       "--seed", "8"],
    }
    checks = []
    for name, args in runs.items():
        codes, trees = [], []
        for rep, threads in (("a", "1"), ("b", "4")):
            out = tmp_path / name / rep
            codes.append(main(args + ["--threads", threads, "--out", str(out)]) if name != "simulate"
                         else main(args + ["--out", str(out)]))
            trees.append({p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()})
        checks.append((f"{name}: re-run byte-identical ({len(trees[0])} files, exit {codes})",
                       trees[0] == trees[1] and codes[0] in (0, 2)))
    bundle = root / "exp" / "benchmark" / "bundle.json"
    a = main(["report", "--bundle", str(bundle), "--out", str(tmp_path / "ra")])
    b = main(["report", "--bundle", str(bundle), "--out", str(tmp_path / "rb")])
    checks.append(("report: re-run byte-identical",
                   a == b == 0 and (tmp_path / "ra" / "wright_map.txt").read_bytes()
                   == (tmp_path / "rb" / "wright_map.txt").read_bytes()))

    m = simulate(300, 0.0, 1.0, seed=12, missing_rate=0.1)
    perm = np.random.default_rng(1).permutation(m.n_items)
    permuted = ResponseMatrix(m.respondent_ids, m.sources, [m.item_ids[j] for j in perm],
                              m.data[:, perm])
    p0 = calibrate_mml(m).item_params
    p1 = calibrate_mml(permuted).item_params
    checks.append(("column permutation permutes item estimates exactly",
                   list(p1.item_ids) == list(permuted.item_ids)
                   and p1 == p0.reorder(permuted.item_ids)))
    s0 = load_bundle(tmp_path / "calibrate" / "a" / "bundle.json")
    humans = load_responses(root / "humans.csv")
    shuffled = ResponseMatrix(humans.respondent_ids, humans.sources,
                              [humans.item_ids[j] for j in perm], humans.data[:, perm])
    write_responses(shuffled, tmp_path / "shuffled.csv")
    main(["calibrate", "--responses", str(tmp_path / "shuffled.csv"), "--bank",
          str(root / "bank_free.json"), "--out", str(tmp_path / "shuf")])
    s1 = load_bundle(tmp_path / "shuf" / "bundle.json")
    checks.append(("CLI: permuted CSV columns give identical bank-ordered estimates",
                   s1.item_params == s0.item_params))
    verdict(8, "determinism and column permutation", checks)


def test_criterion_09_invariants():
    rng = np.random.default_rng(9)
    theta = rng.uniform(-30, 30, 100_000)
    beta = rng.uniform(-30, 30, 100_000)
    comp = float(np.max(np.abs(rasch_prob(theta, beta) + rasch_prob(beta, theta) - 1.0)))
    drops = []
    for k in range(10):
        m = simulate(int(rng.integers(100, 400)), float(rng.normal(0, 0.5)),
                     float(rng.uniform(0.5, 1.5)), seed=100 + k,
                     missing_rate=float(rng.choice([0.0, 0.2])))
        ll = np.asarray(calibrate_mml(m).loglik_history)
        drops.append(float(np.min(np.diff(ll) / np.abs(ll[1:]))))
    sums = []
    m = simulate(400, 0.3, 0.8, seed=13)
    estimate_latent_mwu_mem(m, fixed_truth(), max_cycles=50,
                            callback=lambda w: sums.append((abs(w.sum() - 1.0), w.min())))
    worst_sum = max(s for s, _ in sums)
    min_w = min(w for _, w in sums)
    verdict(9, "invariants", [
        (f"sigma complementarity on 1e5 pairs, max error {comp:.1e} <= 1e-12", comp <= 1e-12),
        (f"EM loglik monotone on 10 datasets (worst relative step {min(drops):.1e})",
         min(drops) >= -1e-12),
        (f"MWU weights: {len(sums)} updates, max |sum-1| {worst_sum:.1e}, min weight {min_w:.1e}",
         worst_sum <= 1e-12 and min_w >= 0.0),
    ])


def test_criterion_10_golden_files():
    from test_report import GOLDEN, fixture_abilities, fixture_params, fixture_report
    report, stats = fixture_report()
    rendered = {
        "wright_map.txt": render_wright_map(fixture_params(), fixture_abilities(), "text"),
        "report.txt": render_experiment_report(report, stats, "text"),
        "report.json": render_experiment_report(report, stats, "json"),
    }
    checks = [(f"{name} byte-stable", text == (GOLDEN / name).read_text(encoding="utf-8"))
              for name, text in rendered.items()]
    params = calibrate_mml(simulate(500, 0.0, 1.0, seed=7)).item_params
    text = render_wright_map(params)
    order = [tok for line in text.splitlines() if "|" in line
             for tok in line.split("|")[-1].split() if tok.startswith("q")]
    want = sorted(params.item_ids, key=lambda i: (params[i].beta, i))
    checks.append((f"item order ascending by difficulty ({len(order)} items)", order == want))
    verdict(10, "golden files and Wright map order", checks)
