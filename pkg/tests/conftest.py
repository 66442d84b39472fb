import numpy as np
import pandas as pd
import pytest

from care_mr.simulation import SCENARIOS, simulate_dataset

NON_PALINDROMIC = [("A", "C"), ("A", "G"), ("C", "A"), ("C", "T"), ("G", "A"), ("G", "T"),
                   ("T", "C"), ("T", "G")]


def write_gwas_files(directory, p_snps=20000, theta=0.1, invalid=0.3, seed=0, swap_frac=0.1):
    """Simulate one dataset and write exposure/outcome summary files.

    A fraction of outcome rows report the other allele as effect allele with
    a negated beta, so harmonization has something to undo.
    """
    cfg = SCENARIOS["main"].with_invalid_prop(invalid)
    cfg = cfg.__class__(**{**cfg.__dict__, "p_snps": p_snps, "theta": theta, "seed": seed})
    data = simulate_dataset(cfg, 0)
    pairs = data.pairs
    rng = np.random.default_rng(seed + 1000)
    alleles = [NON_PALINDROMIC[i] for i in rng.integers(0, len(NON_PALINDROMIC), p_snps)]
    ea = np.array([a for a, _ in alleles])
    oa = np.array([b for _, b in alleles])
    eaf = rng.uniform(0.05, 0.95, p_snps)
    exposure = pd.DataFrame({"SNP": pairs.snp_id, "A1": ea, "A2": oa, "BETA": pairs.beta_x,
                             "SE": pairs.se_x, "EAF": eaf, "N": cfg.n_x})
    swap = rng.random(p_snps) < swap_frac
    outcome = pd.DataFrame({"rsid": pairs.snp_id, "effect_allele": np.where(swap, oa, ea),
                            "other_allele": np.where(swap, ea, oa),
                            "beta": np.where(swap, -pairs.beta_y, pairs.beta_y),
                            "se": pairs.se_y, "eaf": np.where(swap, 1 - eaf, eaf)})
    exp_path = directory / "exposure.tsv"
    out_path = directory / "outcome.csv"
    exposure.to_csv(exp_path, sep="\t", index=False, float_format="%.10g")
    outcome.to_csv(out_path, index=False, float_format="%.10g")
    return exp_path, out_path, data


@pytest.fixture(scope="session")
def gwas_files(tmp_path_factory):
    directory = tmp_path_factory.mktemp("gwas")
    return write_gwas_files(directory)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import ACCEPTANCE_LINES
    except ImportError:
        return
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
