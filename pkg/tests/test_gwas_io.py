import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from care_mr.errors import (ConfigurationError, EmptyInputError, InsufficientOverlapError,
                            ParseError)
from care_mr.gwas_io import (GwasRecord, GwasTable, LdPair, PairTable, SummaryPair, align_sign,
                             detect_separator, harmonize, parse_gwas, read_ld, sigma_prune)


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_single_row_maps_fields(tmp_path):
    path = _write(tmp_path, "a.tsv", "SNP\tA1\tA2\tBETA\tSE\tEAF\nrs1\tA\tG\t0.02\t0.004\t0.31\n")
    recs = parse_gwas(path).records()
    assert recs == [GwasRecord("rs1", "A", "G", 0.02, 0.004, 0.31, None)]


def test_parse_whitespace_separated(tmp_path):
    path = _write(tmp_path, "a.txt", "snp ea oa beta se eaf\nrs1 A G 0.02 0.004 0.31\n")
    recs = parse_gwas(path).records()
    assert recs[0].beta == 0.02 and recs[0].eaf == 0.31


def test_parse_drops_zero_se(tmp_path):
    path = _write(tmp_path, "a.csv", "snp,ea,oa,beta,se\nrs1,A,G,0.1,0\nrs2,A,G,0.1,0.01\n")
    table = parse_gwas(path)
    assert [r.snp_id for r in table.records()] == ["rs2"]
    assert table.dropped == 1


def test_parse_hundred_rows_three_malformed(tmp_path):
    rng = np.random.default_rng(3)
    lines = ["rsid,effect_allele,other_allele,beta,se,eaf,n"]
    bad = {17: "rs17,A,G,NA,0.01,0.2,1000", 42: "rs42,A,G,0.01,-0.5,0.2,1000",
           88: "rs88,A,G,inf,0.01,0.2,1000"}
    for i in range(100):
        if i in bad:
            lines.append(bad[i])
        else:
            lines.append(f"rs{i},C,T,{rng.normal():.6f},{rng.uniform(0.01, 0.1):.6f},0.4,5000")
    table = parse_gwas(_write(tmp_path, "g.csv", "\n".join(lines) + "\n"))
    recs = table.records()
    assert len(recs) == 97
    assert table.dropped == 3
    assert [r.snp_id for r in recs] == [f"rs{i}" for i in range(100) if i not in bad]


def test_parse_bad_optional_fields_become_missing(tmp_path):
    path = _write(tmp_path, "a.tsv", "snp\tea\toa\tbeta\tse\teaf\tn\nrs1\tA\tG\t1\t1\t1.5\t-3\n")
    rec = parse_gwas(path).records()[0]
    assert rec.eaf is None and rec.n is None


def test_parse_missing_column_names_it(tmp_path):
    path = _write(tmp_path, "a.tsv", "snp\tea\toa\tbeta\nrs1\tA\tG\t1\n")
    with pytest.raises(ConfigurationError, match="se"):
        parse_gwas(path)


def test_parse_column_map_overrides(tmp_path):
    path = _write(tmp_path, "a.tsv", "id\tx1\tx2\tb1\tb2\nrs1\tA\tG\t0.5\t0.1\n")
    cmap = {"snp": "id", "effect_allele": "x1", "other_allele": "x2", "beta": "b1", "se": "b2"}
    assert parse_gwas(path, cmap).records()[0] == GwasRecord("rs1", "A", "G", 0.5, 0.1)


def test_parse_errors(tmp_path):
    with pytest.raises(OSError):
        parse_gwas(tmp_path / "missing.tsv")
    with pytest.raises(EmptyInputError):
        parse_gwas(_write(tmp_path, "e.tsv", ""))
    with pytest.raises(EmptyInputError):
        parse_gwas(_write(tmp_path, "e2.tsv", "snp\tea\toa\tbeta\tse\nrs1\tA\tG\tx\t1\n"))


def test_detect_separator():
    assert detect_separator("a\tb,c") == "\t"
    assert detect_separator("a,b") == ","
    assert detect_separator("a b") == r"\s+"


def test_record_invariants():
    with pytest.raises(ValueError):
        GwasRecord("rs1", "A", "G", 0.1, 0.0)
    with pytest.raises(ValueError):
        GwasRecord("rs1", "A", "G", 0.1, 0.1, eaf=1.0)
    with pytest.raises(ValueError):
        GwasRecord("", "A", "G", 0.1, 0.1)
    with pytest.raises(ValueError):
        LdPair("a", "a", 0.1)
    with pytest.raises(ValueError):
        SummaryPair("a", 0.1, -1.0, 0.1, 0.1)


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(finite, st.floats(1e-8, 1e3), st.floats(0.001, 0.999)), min_size=1,
                max_size=20))
def test_serialize_roundtrip_is_bit_exact(tmp_path_factory, rows):
    recs = [GwasRecord(f"rs{i}", "A", "C", b, s, f, 100 + i) for i, (b, s, f) in enumerate(rows)]
    path = tmp_path_factory.mktemp("rt") / "t.tsv"
    GwasTable.from_records(recs).to_csv(path)
    assert parse_gwas(path).records() == recs


# ---------------------------------------------------------------- harmonize


def rec(snp, ea, oa, beta, eaf=None):
    return GwasRecord(snp, ea, oa, beta, 0.01, eaf)


def test_harmonize_swap_flips_sign():
    exp = [rec("rs1", "A", "G", 0.02), rec("rs3", "C", "T", 0.1), rec("rs4", "C", "A", 0.1)]
    out = [rec("rs1", "G", "A", 0.01), rec("rs3", "C", "T", 0.2), rec("rs4", "C", "A", 0.3)]
    pairs = harmonize(exp, out)
    assert pairs[0] == SummaryPair("rs1", 0.02, 0.01, -0.01, 0.01)


def test_harmonize_palindrome_drop():
    exp = [rec("rs2", "A", "T", 0.1, 0.2)] + [rec(f"rs{i}", "A", "C", 0.1) for i in range(3, 6)]
    out = [rec("rs2", "A", "T", 0.1, 0.2)] + [rec(f"rs{i}", "A", "C", 0.1) for i in range(3, 6)]
    pairs = harmonize(exp, out, palindrome_policy="drop")
    assert "rs2" not in set(pairs.snp_id)
    assert pairs.dropped["palindromic"] == 1


def test_harmonize_fifty_snp_fixture():
    """10 swapped, 5 strand-flipped, 3 palindromic: 47 pairs under ``drop``."""
    rng = np.random.default_rng(11)
    comp = {"A": "T", "C": "G", "G": "C", "T": "A"}
    exp, out, expected_sign = [], [], {}
    for i in range(50):
        snp = f"rs{i}"
        beta_x, beta_y = rng.normal(size=2)
        if i < 3:
            ea, oa = ("A", "T") if i % 2 else ("C", "G")
        else:
            ea, oa = ("A", "G") if i % 2 else ("C", "A")
        exp.append(rec(snp, ea, oa, beta_x))
        if i < 3:
            out.append(rec(snp, ea, oa, beta_y))
        elif i < 13:
            out.append(rec(snp, oa, ea, -beta_y))
            expected_sign[snp] = beta_y
        elif i < 18:
            out.append(rec(snp, comp[ea], comp[oa], beta_y))
            expected_sign[snp] = beta_y
        else:
            out.append(rec(snp, ea, oa, beta_y))
            expected_sign[snp] = beta_y
    pairs = harmonize(exp, out, palindrome_policy="drop")
    assert len(pairs) == 47
    for p in pairs:
        assert p.beta_y == expected_sign[p.snp_id]
    assert pairs.dropped["palindromic"] == 3


def test_harmonize_palindrome_infer_uses_eaf():
    exp = [rec("p1", "A", "T", 0.1, 0.2), rec("p2", "A", "T", 0.1, 0.2), rec("p3", "C", "G", 0.1, 0.45)]
    exp += [rec(f"rs{i}", "A", "C", 0.1) for i in range(3)]
    out = [rec("p1", "A", "T", 0.3, 0.22), rec("p2", "A", "T", 0.3, 0.8), rec("p3", "C", "G", 0.3, 0.45)]
    out += [rec(f"rs{i}", "A", "C", 0.1) for i in range(3)]
    pairs = harmonize(exp, out, palindrome_policy="infer", eaf_window=0.08)
    got = {p.snp_id: p.beta_y for p in pairs}
    assert got["p1"] == 0.3
    assert got["p2"] == -0.3
    assert "p3" not in got


def test_harmonize_irreconcilable_and_overlap():
    exp = [rec("rs1", "A", "G", 0.1), rec("rs2", "A", "G", 0.1)]
    out = [rec("rs1", "A", "C", 0.1), rec("rs2", "A", "G", 0.1)]
    with pytest.raises(InsufficientOverlapError):
        harmonize(exp, out)


def test_align_sign_rules():
    assert align_sign("A", "G", "A", "G")[0] == 1
    assert align_sign("A", "G", "G", "A")[0] == -1
    assert align_sign("A", "G", "T", "C")[0] == 1
    assert align_sign("A", "G", "C", "T")[0] == -1
    assert align_sign("A", "G", "A", "C")[0] is None


def _frame_records(pairs, seed):
    """Map harmonized pairs back to records with random allele presentation."""
    rng = np.random.default_rng(seed)
    exp, out = [], []
    for p in pairs:
        exp.append(GwasRecord(p.snp_id, "A", "G", p.beta_x, p.se_x))
        if rng.random() < 0.5:
            out.append(GwasRecord(p.snp_id, "G", "A", -p.beta_y, p.se_y))
        else:
            out.append(GwasRecord(p.snp_id, "A", "G", p.beta_y, p.se_y))
    return exp, out


def test_harmonize_idempotent():
    rng = np.random.default_rng(5)
    base = PairTable.from_arrays(rng.normal(size=12), np.full(12, 0.1), rng.normal(size=12),
                                 np.full(12, 0.2))
    once = harmonize(*_frame_records(base, 1))
    twice = harmonize(*_frame_records(once, 2))
    assert list(once) == list(twice) == list(base)


# ---------------------------------------------------------------- pruning


def _pairs(se_x, ids=None):
    n = len(se_x)
    ids = ids or [f"s{i:02d}" for i in range(n)]
    return PairTable.from_arrays(np.ones(n), np.asarray(se_x, float), np.ones(n), np.ones(n), ids)


def test_prune_empty_ld_is_identity():
    pairs = _pairs([0.1, 0.2, 0.3])
    assert list(sigma_prune(pairs, [])) == list(pairs)


def test_prune_keeps_smallest_se():
    pairs = _pairs([0.001, 0.002], ["a", "b"])
    assert list(sigma_prune(pairs, [LdPair("a", "b", 0.5)]).snp_id) == ["a"]


def test_prune_ties_by_id():
    pairs = _pairs([0.1, 0.1], ["b", "a"])
    assert list(sigma_prune(pairs, [LdPair("a", "b", 0.9)]).snp_id) == ["a"]


def _oracle_prune(ids, se_x, edges, thr):
    alive = set(range(len(ids)))
    kept = []
    while alive:
        best = min(alive, key=lambda i: (se_x[i], ids[i]))
        kept.append(best)
        alive.discard(best)
        for a, b, r2 in edges:
            if r2 > thr and best in (a, b):
                alive.discard(b if a == best else a)
    return sorted(kept)


@pytest.mark.parametrize("seed", range(10))
def test_prune_matches_straight_line_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 20
    se_x = np.round(rng.uniform(0.001, 0.01, n), 4)
    pairs = _pairs(se_x)
    edges, ld = [], []
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < 0.15:
                r2 = float(rng.choice([0.0005, 0.01, 0.3, 0.9]))
                edges.append((a, b, r2))
                ld.append(LdPair(pairs.snp_id[a], pairs.snp_id[b], r2))
    ld.append(LdPair("unknown", pairs.snp_id[0], 1.0))
    got = sigma_prune(pairs, ld, 0.001)
    want = _oracle_prune(list(pairs.snp_id), se_x, edges, 0.001)
    assert list(got.snp_id) == [pairs.snp_id[i] for i in want]
    survivors = set(got.snp_id)
    for p in ld:
        assert not (p.snp_a in survivors and p.snp_b in survivors and p.r2 > 0.001)


def test_prune_threshold_domain():
    with pytest.raises(ConfigurationError):
        sigma_prune(_pairs([0.1]), [], 0.0)


def test_read_ld_and_pair_tsv(tmp_path):
    path = _write(tmp_path, "ld.tsv", "snp_a\tsnp_b\tr2\na\tb\t0.5\n")
    assert read_ld(path) == [LdPair("a", "b", 0.5)]
    pairs = _pairs([0.1, 0.2], ["a", "b"])
    out = tmp_path / "pairs.tsv"
    pairs.to_tsv(out)
    frame = pd.read_csv(out, sep="\t")
    assert list(frame.columns) == ["snp_id", "beta_x", "se_x", "beta_y", "se_y"]
    assert math.isclose(frame["se_x"][1], 0.2)
