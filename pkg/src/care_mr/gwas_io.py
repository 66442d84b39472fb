"""Reading GWAS summary files, allele harmonization and sigma-based pruning."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigurationError, EmptyInputError, InsufficientOverlapError, ParseError

log = logging.getLogger(__name__)

REQUIRED_ROLES = ("snp", "effect_allele", "other_allele", "beta", "se")
OPTIONAL_ROLES = ("eaf", "n")

# lower-cased header aliases tried when a role is not mapped explicitly
HEADER_ALIASES = {
    "snp": ("snp", "snp_id", "rsid", "rs_id", "variant_id", "id", "markername"),
    "effect_allele": ("effect_allele", "ea", "a1", "allele1", "alt"),
    "other_allele": ("other_allele", "oa", "nea", "a2", "allele2", "ref"),
    "beta": ("beta", "b", "effect", "bhat"),
    "se": ("se", "sebeta", "standard_error", "stderr"),
    "eaf": ("eaf", "freq", "af", "a1_freq", "effect_allele_freq", "frq"),
    "n": ("n", "samplesize", "sample_size", "n_total"),
}

_COMPLEMENT = str.maketrans("ACGT", "TGCA")
_PALINDROMES = {("A", "T"), ("T", "A"), ("C", "G"), ("G", "C")}


@dataclass(frozen=True)
class GwasRecord:
    snp_id: str
    effect_allele: str
    other_allele: str
    beta: float
    se: float
    eaf: Optional[float] = None
    n: Optional[int] = None

    def __post_init__(self):
        if not self.snp_id:
            raise ValueError("snp_id must be nonempty")
        if not self.se > 0:
            raise ValueError(f"{self.snp_id}: se must be positive, got {self.se}")
        if self.eaf is not None and not 0 < self.eaf < 1:
            raise ValueError(f"{self.snp_id}: eaf must lie in (0, 1), got {self.eaf}")


@dataclass(frozen=True)
class SummaryPair:
    """One SNP's aligned exposure and outcome associations."""

    snp_id: str
    beta_x: float
    se_x: float
    beta_y: float
    se_y: float

    def __post_init__(self):
        if not (self.se_x > 0 and self.se_y > 0):
            raise ValueError(f"{self.snp_id}: standard errors must be positive")


@dataclass(frozen=True)
class LdPair:
    snp_a: str
    snp_b: str
    r2: float

    def __post_init__(self):
        if self.snp_a == self.snp_b:
            raise ValueError("LD pair must join two distinct SNPs")
        if not 0.0 <= self.r2 <= 1.0:
            raise ValueError(f"r2 must lie in [0, 1], got {self.r2}")


@dataclass
class GwasTable:
    """Parsed GWAS rows in file order.

    ``frame`` has the canonical columns ``snp, effect_allele, other_allele,
    beta, se, eaf, n``; ``eaf`` and ``n`` may hold NaN.
    """

    frame: pd.DataFrame
    dropped: int = 0
    source: str = ""

    def __len__(self):
        return len(self.frame)

    def records(self) -> list[GwasRecord]:
        out = []
        for row in self.frame.itertuples(index=False):
            eaf = None if pd.isna(row.eaf) else float(row.eaf)
            n = None if pd.isna(row.n) else int(row.n)
            out.append(GwasRecord(row.snp, row.effect_allele, row.other_allele,
                                  float(row.beta), float(row.se), eaf, n))
        return out

    @classmethod
    def from_records(cls, records: Iterable[GwasRecord], source=""):
        rows = [(r.snp_id, r.effect_allele, r.other_allele, r.beta, r.se,
                 np.nan if r.eaf is None else r.eaf,
                 np.nan if r.n is None else r.n) for r in records]
        frame = pd.DataFrame(rows, columns=["snp", "effect_allele", "other_allele",
                                            "beta", "se", "eaf", "n"])
        return cls(_canonical_types(frame), 0, source)

    def to_csv(self, path, sep="\t"):
        """Write with shortest round-trip float formatting."""
        out = self.frame.copy()
        for col in ("beta", "se", "eaf"):
            out[col] = [repr(float(x)) if np.isfinite(x) else "NA" for x in out[col]]
        out["n"] = [str(int(x)) if np.isfinite(x) else "NA" for x in out["n"]]
        out.to_csv(path, sep=sep, index=False)


@dataclass
class PairTable:
    """Columnar collection of :class:`SummaryPair` rows."""

    snp_id: np.ndarray
    beta_x: np.ndarray
    se_x: np.ndarray
    beta_y: np.ndarray
    se_y: np.ndarray
    dropped: dict = field(default_factory=dict)

    def __post_init__(self):
        self.snp_id = np.asarray(self.snp_id, dtype=object)
        for name in ("beta_x", "se_x", "beta_y", "se_y"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.snp_id)
        if any(len(getattr(self, c)) != n for c in ("beta_x", "se_x", "beta_y", "se_y")):
            raise ValueError("column lengths differ")
        if n and not (np.all(self.se_x > 0) and np.all(self.se_y > 0)):
            raise ValueError("standard errors must be positive")

    def __len__(self):
        return len(self.snp_id)

    def __getitem__(self, i) -> SummaryPair:
        return SummaryPair(str(self.snp_id[i]), float(self.beta_x[i]), float(self.se_x[i]),
                           float(self.beta_y[i]), float(self.se_y[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "PairTable":
        idx = np.asarray(idx)
        return PairTable(self.snp_id[idx], self.beta_x[idx], self.se_x[idx],
                         self.beta_y[idx], self.se_y[idx])

    @classmethod
    def from_pairs(cls, pairs: Sequence[SummaryPair]) -> "PairTable":
        pairs = list(pairs)
        return cls(np.array([p.snp_id for p in pairs], dtype=object),
                   [p.beta_x for p in pairs], [p.se_x for p in pairs],
                   [p.beta_y for p in pairs], [p.se_y for p in pairs])

    @classmethod
    def from_arrays(cls, beta_x, se_x, beta_y, se_y, snp_id=None) -> "PairTable":
        if snp_id is None:
            snp_id = np.array([f"snp{i}" for i in range(len(beta_x))], dtype=object)
        return cls(snp_id, beta_x, se_x, beta_y, se_y)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"snp_id": self.snp_id, "beta_x": self.beta_x, "se_x": self.se_x,
                             "beta_y": self.beta_y, "se_y": self.se_y})

    def to_tsv(self, path):
        self.to_frame().to_csv(path, sep="\t", index=False)


def _canonical_types(frame):
    frame = frame.copy()
    for col in ("snp", "effect_allele", "other_allele"):
        frame[col] = frame[col].astype(str)
    for col in ("beta", "se", "eaf", "n"):
        if frame[col].dtype == object:
            # float() is correctly rounded; pandas' fast text parser is not
            frame[col] = np.fromiter((_to_float(x) for x in frame[col]), float, len(frame))
        else:
            frame[col] = frame[col].astype(float)
    return frame.reset_index(drop=True)


def _to_float(x) -> float:
    try:
        return float(x)
    except (TypeError, ValueError):
        return np.nan


def detect_separator(header: str) -> str:
    if "\t" in header:
        return "\t"
    if "," in header:
        return ","
    return r"\s+"


def _resolve_columns(header: Sequence[str], column_map: Optional[Mapping[str, str]], path):
    column_map = dict(column_map or {})
    unknown = set(column_map) - set(REQUIRED_ROLES) - set(OPTIONAL_ROLES)
    if unknown:
        raise ConfigurationError(f"unknown column role(s) {sorted(unknown)}")
    lowered = {h.strip().lower(): h for h in header}
    resolved = {}
    for role in REQUIRED_ROLES + OPTIONAL_ROLES:
        if role in column_map:
            name = column_map[role]
            if name not in header:
                raise ConfigurationError(f"{path}: column '{name}' for role '{role}' not in header")
            resolved[role] = name
            continue
        for alias in HEADER_ALIASES[role]:
            if alias in lowered:
                resolved[role] = lowered[alias]
                break
        else:
            if role in REQUIRED_ROLES:
                raise ConfigurationError(f"{path}: missing required column for role '{role}'")
    return resolved


def parse_gwas(path, column_map: Optional[Mapping[str, str]] = None, sep: Optional[str] = None) -> GwasTable:
    """Read a delimited GWAS summary file.

    The delimiter is sniffed from the header (tab, then comma, then
    whitespace) unless ``sep`` is given. Rows whose beta or se is missing,
    non-numeric, non-finite, or whose se is not positive are dropped and
    counted in ``GwasTable.dropped``. An out-of-range eaf or non-positive n is
    treated as missing rather than dropping the row.
    """
    path = Path(path)
    try:
        with open(path, "r", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read GWAS file {path}: {exc.strerror or exc}") from exc
    header = text.split("\n", 1)[0].rstrip("\r")
    if not header.strip():
        raise EmptyInputError(f"{path}: file is empty")
    sep = sep or detect_separator(header)
    try:
        raw = pd.read_csv(io.StringIO(text), sep=sep, dtype=str, keep_default_na=False,
                          engine="c" if sep != r"\s+" else "python")
    except pd.errors.ParserError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    cols = _resolve_columns(list(raw.columns), column_map, path)

    frame = pd.DataFrame({role: raw[name] for role, name in cols.items()})
    for role in OPTIONAL_ROLES:
        if role not in frame:
            frame[role] = np.nan
    frame = _canonical_types(frame)
    frame["effect_allele"] = frame["effect_allele"].str.strip().str.upper()
    frame["other_allele"] = frame["other_allele"].str.strip().str.upper()
    frame["snp"] = frame["snp"].str.strip()

    ok = (np.isfinite(frame["beta"]) & np.isfinite(frame["se"]) & (frame["se"] > 0)
          & (frame["snp"] != "") & (frame["effect_allele"] != "") & (frame["other_allele"] != ""))
    dropped = int((~ok).sum())
    frame = frame[ok].reset_index(drop=True)
    bad_eaf = ~((frame["eaf"] > 0) & (frame["eaf"] < 1))
    frame.loc[bad_eaf, "eaf"] = np.nan
    frame.loc[~(frame["n"] > 0), "n"] = np.nan
    if dropped:
        log.info("%s: dropped %d malformed rows", path, dropped)
    if frame.empty:
        raise EmptyInputError(f"{path}: no valid rows")
    return GwasTable(frame, dropped, str(path))


def read_ld(path, sep: Optional[str] = None) -> list[LdPair]:
    """Read pairwise LD with columns ``snp_a, snp_b, r2``."""
    path = Path(path)
    try:
        with open(path) as fh:
            header = fh.readline()
    except OSError as exc:
        raise OSError(f"cannot read LD file {path}: {exc.strerror or exc}") from exc
    sep = sep or detect_separator(header)
    frame = pd.read_csv(path, sep=sep, dtype={"snp_a": str, "snp_b": str},
                        engine="c" if sep != r"\s+" else "python")
    missing = {"snp_a", "snp_b", "r2"} - set(frame.columns)
    if missing:
        raise ConfigurationError(f"{path}: LD file missing column(s) {sorted(missing)}")
    try:
        return [LdPair(a, b, float(r)) for a, b, r in
                zip(frame["snp_a"], frame["snp_b"], frame["r2"])]
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _complement(allele: str) -> str:
    return allele.translate(_COMPLEMENT)


def _is_nucleotide(allele: str) -> bool:
    return bool(allele) and set(allele) <= set("ACGT")


def align_sign(ea_x, oa_x, ea_y, oa_y, eaf_x=None, eaf_y=None,
               palindrome_policy="infer", eaf_window=0.08):
    """Sign (+1/-1) that aligns the outcome effect to the exposure effect allele.

    Returns ``(sign, reason)`` where ``sign`` is None when the SNP cannot be
    aligned and ``reason`` names why.
    """
    if (ea_x, oa_x) in _PALINDROMES:
        if {ea_y, oa_y} != {ea_x, oa_x}:
            return None, "irreconcilable"
        if palindrome_policy == "drop":
            return None, "palindromic"
        if eaf_x is None or eaf_y is None or np.isnan(eaf_x) or np.isnan(eaf_y):
            return None, "palindromic"
        lo, hi = 0.5 - eaf_window, 0.5 + eaf_window
        if lo < eaf_x < hi or lo < eaf_y < hi:
            return None, "palindromic"
        sign = 1 if ea_y == ea_x else -1
        freq_y = eaf_y if sign == 1 else 1.0 - eaf_y
        if (eaf_x - 0.5) * (freq_y - 0.5) < 0:
            sign = -sign
        return sign, "ok"
    if ea_y == ea_x and oa_y == oa_x:
        return 1, "ok"
    if ea_y == oa_x and oa_y == ea_x:
        return -1, "ok"
    if _is_nucleotide(ea_x) and _is_nucleotide(oa_x):
        cx, co = _complement(ea_x), _complement(oa_x)
        if ea_y == cx and oa_y == co:
            return 1, "ok"
        if ea_y == co and oa_y == cx:
            return -1, "ok"
    return None, "irreconcilable"


def harmonize(exposure, outcome, palindrome_policy="infer", eaf_window=0.08) -> PairTable:
    """Inner-join exposure and outcome rows on SNP id and align alleles.

    ``palindrome_policy`` is ``"drop"`` or ``"infer"``. Under ``infer`` an
    A/T or C/G SNP is aligned by which side of 0.5 its allele frequencies fall,
    and dropped if either frequency lies within ``eaf_window`` of 0.5 or is
    missing. Drop counts are reported in ``PairTable.dropped``.
    """
    if palindrome_policy not in ("drop", "infer"):
        raise ConfigurationError(f"unknown palindrome policy {palindrome_policy!r}")
    if not 0 <= eaf_window < 0.5:
        raise ConfigurationError("eaf_window must lie in [0, 0.5)")
    ex = exposure.frame if isinstance(exposure, GwasTable) else GwasTable.from_records(exposure).frame
    out = outcome.frame if isinstance(outcome, GwasTable) else GwasTable.from_records(outcome).frame
    out = out.drop_duplicates("snp", keep="first")
    joined = ex.merge(out, on="snp", how="inner", suffixes=("_x", "_y"), sort=False)

    keep, signs = [], []
    dropped = {"palindromic": 0, "irreconcilable": 0}
    for i, row in enumerate(joined.itertuples(index=False)):
        sign, reason = align_sign(row.effect_allele_x, row.other_allele_x,
                                  row.effect_allele_y, row.other_allele_y,
                                  row.eaf_x, row.eaf_y, palindrome_policy, eaf_window)
        if sign is None:
            dropped[reason] += 1
            continue
        keep.append(i)
        signs.append(sign)
    dropped["not_in_outcome"] = int(len(ex) - len(joined))
    if len(keep) < 3:
        raise InsufficientOverlapError(
            f"only {len(keep)} harmonized SNPs shared by exposure and outcome (need at least 3)")
    sel = joined.iloc[keep]
    table = PairTable(sel["snp"].to_numpy(dtype=object), sel["beta_x"].to_numpy(),
                      sel["se_x"].to_numpy(), sel["beta_y"].to_numpy() * np.asarray(signs, float),
                      sel["se_y"].to_numpy())
    table.dropped = dropped
    return table


def sigma_prune(pairs: PairTable, ld: Iterable[LdPair], r2_threshold: float = 0.001) -> PairTable:
    """Greedy LD pruning that keeps the SNP with the smallest exposure SE.

    SNPs are visited in increasing ``se_x`` (ties by id); each kept SNP
    removes every remaining SNP linked to it with ``r2 > r2_threshold``.
    Survivors keep their input order.
    """
    if not 0 < r2_threshold <= 1:
        raise ConfigurationError("r2_threshold must lie in (0, 1]")
    ids = [str(s) for s in pairs.snp_id]
    pos = {s: i for i, s in enumerate(ids)}
    neighbours: dict[int, list[int]] = {}
    for pair in ld:
        a, b = pos.get(pair.snp_a), pos.get(pair.snp_b)
        if a is None or b is None or pair.r2 <= r2_threshold:
            continue
        neighbours.setdefault(a, []).append(b)
        neighbours.setdefault(b, []).append(a)
    if not neighbours:
        return pairs.subset(np.arange(len(pairs)))
    order = sorted(range(len(ids)), key=lambda i: (pairs.se_x[i], ids[i]))
    removed = np.zeros(len(ids), dtype=bool)
    for i in order:
        if removed[i]:
            continue
        for j in neighbours.get(i, ()):
            removed[j] = True
    return pairs.subset(np.flatnonzero(~removed))
