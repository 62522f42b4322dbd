"""Acceptance criteria, one test each; the summary prints a PASS/FAIL line per criterion."""
import functools
import itertools
import json
import math

import numpy as np
import pytest

from decision_machines.analysis import (
    audit,
    exact_rank,
    matches_source,
    reconstruct,
    sibling_pairs,
    subtree_template,
)
from decision_machines.cli import main as cli_main
from decision_machines.compiler import (
    compile_tree,
    compile_with_categorical,
    dump_machine,
    machine_to_dict,
    ternary_to_strings,
)
from decision_machines.inference import (
    Forest,
    combine_block,
    decide,
    forest_predict,
    margins,
    predict,
    predict_batch,
    predict_delta,
    result_vector,
    similarity_scores,
)
from decision_machines.soft import (
    Expert,
    SelectionPredictionModel,
    SoftConfig,
    attention_eval,
    finite_difference_check,
    glm_tree_predict,
    logical_model,
    sglmt_model,
    soft_decide,
    soft_predict,
    soft_predict_grad,
    soft_scores,
    soft_weights,
    sp_predict,
    sp_predict_grad,
)
from decision_machines.tree import RandomTreeConfig, dump_tree, random_tree, traverse

from _corpus import (
    TREE1_X,
    all_shapes,
    corpus_tree,
    margin_input,
    random_categorical_tree,
    random_inputs,
    tree_from_shape,
)

N_TREES = 1000
N_INPUTS = 100


@functools.lru_cache(maxsize=None)
def corpus():
    rng = np.random.default_rng(2024)
    out = []
    for seed in range(N_TREES):
        tree = corpus_tree(seed)
        out.append((tree, compile_tree(tree), random_inputs(tree, rng, N_INPUTS)))
    return out


def scaled(machine, rng):
    """Same machine with leaf values drawn from [-1, 1]."""
    return machine.with_values(rng.uniform(-1, 1, machine.L).tolist())


@pytest.mark.acceptance("worked example golden test")
def test_worked_example(tree1, machine1, note):
    assert machine1.S.tolist() == [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]]
    assert machine1.t.tolist() == [1, 4, 3, 2, 5]
    assert ternary_to_strings(machine1.B) == ["--0-0", "--0+-", "--0++", "-+000", "+0-00", "+0+00"]
    x = np.asarray(TREE1_X)
    assert margins(machine1, x).tolist() == [1, -3, -1, -1, -3]
    h = result_vector(machine1, x)
    assert h.tolist() == [1, -1, -1, -1, -1]
    from fractions import Fraction as F
    assert [s.value for s in similarity_scores(machine1, h)] == [F(1, 3), 0, F(-1, 2), -1, 1, 0]
    assert decide(machine1, x) + 1 == 5
    assert predict(machine1, x) == "v5"
    note("decide = 5 (1-based), predict = v5")


@pytest.mark.acceptance("oracle equivalence (1000 trees x 100 inputs)")
def test_oracle_equivalence(note):
    failures = checked = 0
    for tree, m, X in corpus():
        assert m.L <= 256 and m.n <= 16 and max(tree.leaf_depths().values()) <= 8
        for x in X:
            checked += 1
            i = decide(m, x)
            if m.leaf_order[i] != traverse(tree, x)[0]:
                failures += 1
                continue
            if m.L == 1:
                continue
            scores = similarity_scores(m, result_vector(m, x))
            units = [k for k, s in enumerate(scores) if s.is_unit]
            if units != [i] or any(not s.value < 1 for k, s in enumerate(scores) if k != i):
                failures += 1
    note(f"{checked} pairs, {failures} failures")
    assert checked == N_TREES * N_INPUTS and failures == 0


@pytest.mark.acceptance("delta-form and batch equivalence (bitwise)")
def test_delta_and_batch(note):
    mismatches = 0
    for tree, m, X in corpus():
        direct = [predict(m, x) for x in X]
        delta = [predict_delta(m, x) for x in X]
        batch = predict_batch(m, X)
        mismatches += sum(float(a).hex() != float(b).hex() for a, b in zip(direct, delta))
        mismatches += sum(float(a).hex() != float(b).hex() for a, b in zip(direct, batch))
    note(f"{mismatches} mismatches over {2 * N_TREES * N_INPUTS} comparisons")
    assert mismatches == 0


def _structure_ok(tree, m) -> list[str]:
    problems = []
    if m.L < 2:
        return problems
    r = audit(m.B)
    depths = tree.leaf_depths()
    if not r.rows_distinct:
        problems.append("rows not distinct")
    if not r.column_polarity_ok:
        problems.append("column without both signs")
    if r.root_column_candidates != [0] or m.test_order[0] != tree.root:
        problems.append("root column")
    if r.trace_BBt != sum(depths.values()):
        problems.append("trace")
    if r.max_row_nonzeros != max(depths.values()):
        problems.append("max row norm")
    row = {lid: i for i, lid in enumerate(m.leaf_order)}
    col = {nid: j for j, nid in enumerate(m.test_order)}
    expected = sorted((row[n.left], row[n.right], col[n.id]) for n in tree.internal_nodes()
                      if tree.nodes[n.left].is_leaf and tree.nodes[n.right].is_leaf)
    if sibling_pairs(m.B) != expected:
        problems.append("sibling pairs")
    if not matches_source(reconstruct(m.B), tree, m):
        problems.append("reconstruction")
    return problems


@pytest.mark.acceptance("structure suite")
def test_structure_suite(machine1, note):
    bad = []
    shapes = 0
    for leaves in range(1, 7):
        for k, shape in enumerate(all_shapes(leaves)):
            shapes += 1
            tree = tree_from_shape(shape, seed=k)
            m = compile_tree(tree)
            bad += [(shape, p) for p in _structure_ok(tree, m)]
    for tree, m, _ in corpus():
        bad += [(tree, p) for p in _structure_ok(tree, m)]
    r = audit(machine1.B)
    assert (r.trace_BBt, r.max_row_nonzeros) == (17, 4)
    M, rows, cols = subtree_template(machine1.B, 0, "left")
    assert M.tolist() == [[-1, -1, 0], [-1, 1, -1], [-1, 1, 1], [1, 0, 0]]
    note(f"{shapes} shapes (L <= 6) + {N_TREES} corpus machines, {len(bad)} problems")
    assert shapes == 1 + 1 + 2 + 5 + 14 + 42
    assert not bad, bad[:3]


@pytest.mark.acceptance("rank conjecture sweep (monitored)")
def test_rank_sweep(tmp_path_factory, note):
    swept, violations = 0, []
    for tree, m, _ in corpus():
        if m.L < 2:
            continue
        swept += 1
        r = exact_rank(m.B)
        if r != m.L - 1:
            violations.append({"rank": r, "L": m.L, "tree": json.loads(dump_tree(tree)), "machine": machine_to_dict(m)})
    out = tmp_path_factory.mktemp("rank") / "counterexamples.json"
    out.write_text(json.dumps(violations, indent=1))
    note(f"{swept} machines, {len(violations)} violations, artifact {out}")
    if violations:
        print(f"rank conjecture counterexamples written to {out}")
    assert swept >= 500


@pytest.mark.acceptance("forest / block combination")
def test_forest_block(note):
    rng = np.random.default_rng(7)
    worst, pairs = 0.0, 0
    for k in range(200):
        n = 1 + k % 16
        cfg = RandomTreeConfig(max_depth=1 + k % 8, feature_count=n)
        m1 = compile_tree(random_tree(10_000 + 2 * k, cfg))
        m2 = compile_tree(random_tree(10_001 + 2 * k, cfg))
        w1, w2 = rng.normal(size=2)
        block = combine_block(m1, m2, w1, w2)
        pairs += 1
        for x in rng.uniform(-10, 10, size=(20, n)):
            x = np.round(x * 4) / 4
            ref = w1 * predict(m1, x) + w2 * predict(m2, x)
            worst = max(worst, abs(block.evaluate(x) - ref))
    _, m, X = corpus()[5]
    single = Forest((m,), (1.0,))
    assert all(forest_predict(single, x) == predict(m, x) for x in X)
    note(f"{pairs} pairs, max |error| = {worst:.3g}")
    assert pairs >= 200 and worst <= 1e-12


@pytest.mark.acceptance("soft agreement off the gap")
def test_soft_agreement(note):
    rng = np.random.default_rng(8)
    pairs = disagree = 0
    worst = 0.0
    cfg_sat = SoftConfig("satlin", 1.0)
    cfg_tanh = SoftConfig("tanh")
    for tree, m, _ in corpus():
        if m.L < 2:
            continue
        x = margin_input(m, rng, 1.0)
        assert np.abs(margins(m, x)).min() >= 1.0
        pairs += 1
        disagree += soft_decide(m, x, cfg_sat) != decide(m, x)
        x20 = margin_input(m, rng, 20.0)
        exact = np.array([float(s.value) for s in similarity_scores(m, result_vector(m, x20))])
        worst = max(worst, float(np.abs(soft_scores(m, x20, cfg_tanh) - exact).max()))
    note(f"{pairs} pairs, {disagree} disagreements, tanh max score error {worst:.3g}")
    assert pairs >= 900 and disagree == 0 and worst <= 1e-8


@pytest.mark.acceptance("temperature limits")
def test_temperature_limits(note):
    rng = np.random.default_rng(9)
    low_w, low_err, high_err, count = 1.0, 0.0, 0.0, 0
    raw_worst = 0.0
    for tree, m, _ in corpus()[:400]:
        if m.L < 2:
            continue
        x = margin_input(m, rng, 1.0)
        i = decide(m, x)
        cold = SoftConfig("satlin", 1.0, 1e-3)
        w = soft_weights(m, x, cold)[i]
        v = m.values[i]
        err = abs(soft_predict(m, x, cold) - v)
        assert w >= 0.999 and err <= abs(v) * 1e-6 + 1e-9
        low_w = min(low_w, w)
        low_err = max(low_err, err)
        ms = scaled(m, rng)
        hot = SoftConfig("satlin", 1.0, 1e6)
        high_err = max(high_err, abs(soft_predict(ms, x, hot) - float(np.mean(ms.values))))
        # raw values: the gap to the mean is first order in 1/tau and scales with the value spread
        spread = float(np.abs(m.values - m.values.mean()).max())
        raw_gap = abs(soft_predict(m, x, hot) - float(np.mean(m.values)))
        assert raw_gap <= math.expm1(2 / hot.tau) * spread + 1e-12 * (1 + np.abs(m.values).max())
        raw_worst = max(raw_worst, raw_gap)
        count += 1
    note(f"{count} machines; tau=1e-3 min weight {low_w:.6f}, max err {low_err:.3g}; "
         f"tau=1e6 max |pred - mean| {high_err:.3g} on [-1, 1] values, {raw_worst:.3g} on raw values")
    assert high_err <= 1e-6


@pytest.mark.acceptance("equivalence chains")
def test_equivalence_chains(note):
    rng = np.random.default_rng(10)
    att = hard = glm = 0
    sg_worst = 0.0
    for tree, m, X in corpus()[:300]:
        if m.L < 2:
            continue
        cfg = SoftConfig(("sign", "satlin", "tanh")[m.L % 3], 0.8, 0.6)
        lm = logical_model(m)
        consts = [Expert.constant(v) for v in m.values]
        for x in X[:20]:
            att += attention_eval(m, x, cfg) != soft_predict(m, x, cfg)
            hard += sp_predict(lm, x) != predict(m, x)
            glm += glm_tree_predict(m, consts, x) != predict(m, x)
        experts = [Expert("affine", rng.normal(size=m.n) * 0.1, rng.normal()) for _ in range(m.L)]
        model = sglmt_model(m, experts, tau=1e-4)
        for _ in range(5):
            x = margin_input(m, rng, 1.0)
            sg_worst = max(sg_worst, abs(sp_predict(model, x) - glm_tree_predict(m, experts, x)))
    note(f"attention {att}, hard-delta {hard}, constant-GLM {glm} mismatches; sglmt max err {sg_worst:.3g}")
    assert att == hard == glm == 0 and sg_worst <= 1e-6


@pytest.mark.acceptance("gradient checks")
def test_gradients(numeric_machine1, note):
    rng = np.random.default_rng(11)
    reports = []
    machines = [numeric_machine1] + [scaled(m, rng) for _, m, _ in corpus()[3:40:4] if m.L > 1]
    cfg = SoftConfig("tanh", tau=0.7)
    points = 0
    for m in machines:
        for _ in range(2):
            # near the thresholds so the tanh slopes are not negligible
            x = np.array([rng.choice(m.t[m.S[:, f] != 0]) + rng.uniform(-1.5, 1.5)
                          if (m.S[:, f] != 0).any() else rng.uniform(-5, 5) for f in range(m.n)])
            reports.append(finite_difference_check(lambda a: soft_predict(m, a, cfg),
                                                   lambda a: soft_predict_grad(m, a, cfg), x, h=1e-6, rtol=1e-5))
            points += 1
    sp_points = 0
    for d in (2, 4, 8):
        keys = rng.normal(size=(6, d))
        experts = tuple(Expert(("affine", "logistic-link")[j % 2], rng.normal(size=d), rng.normal())
                        for j in range(6))
        model = SelectionPredictionModel(keys, "gaussian-rbf", experts, tau=2.0)
        for _ in range(4):
            x = rng.normal(size=d)
            reports.append(finite_difference_check(lambda a: sp_predict(model, a),
                                                   lambda a: sp_predict_grad(model, a), x, h=1e-6, rtol=1e-5))
            sp_points += 1
    worst = max(r.max_rel_error for r in reports)
    note(f"{points} soft points, {sp_points} rbf points, max rel error {worst:.3g}")
    assert points >= 10 and sp_points >= 10
    assert all(r.passed for r in reports)


@pytest.mark.acceptance("categorical exhaustive check")
def test_categorical(note):
    checked = 0
    for seed in range(150):
        tree = random_categorical_tree(seed)
        domains = tree.categorical_domains
        grids = []
        for f in range(tree.feature_count):
            if f in domains:
                grids.append(domains[f])
            else:
                grids.append((-4.5, -1.0, 0.0, 0.5, 2.0, 4.0))
        for mode in ("lagrange", "dummy"):
            m = compile_with_categorical(tree, mode)
            for x in itertools.product(*grids):
                checked += 1
                assert m.leaf_order[decide(m, x)] == traverse(tree, x)[0], (seed, mode, x)
    assert max(len(d) for s in range(150) for d in random_categorical_tree(s).categorical_domains.values()) <= 8
    note(f"{checked} exhaustive points over 150 trees, both indicator modes")


@pytest.mark.acceptance("bench tripwire (10^4 rows)")
def test_bench(tmp_path, tree1, machine1, note, capsys):
    cases = [("tree1", tree1, machine1)]
    cases += [(f"corpus{s}", t, m) for s, (t, m, _) in enumerate(corpus()) if s in (7, 15, 255, 639)]
    cat = random_categorical_tree(3)
    cases.append(("categorical", cat, compile_with_categorical(cat)))
    for name, tree, m in cases:
        mp, tp, out = tmp_path / f"{name}.json", tmp_path / f"{name}.tree.json", tmp_path / f"{name}.bench.json"
        mp.write_text(dump_machine(m))
        tp.write_text(dump_tree(tree))
        for extra in (["--tree", str(tp)], []):
            if extra == [] and m.feature_transform:
                continue
            assert cli_main(["bench", str(mp), "--rows", "10000", "--reps", "1", "--out", str(out), *extra]) == 0
            doc = json.loads(out.read_text())
            assert doc["agree"] and len(doc["leaves"]) == 10_000
    capsys.readouterr()
    note(f"{len(cases)} machines x 10000 rows, traverse/decide/batch identical")


def test_counts_are_what_the_criteria_require():
    assert N_TREES >= 1000 and N_INPUTS >= 100
    assert math.comb(10, 5) // 6 == 42  # Catalan(5): shapes with 6 leaves
