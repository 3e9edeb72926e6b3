"""Plain records passed between the scoring and linkage stages."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, List

from .errors import ManifestError

PAIR_SCORE_FIELDS = ("path_a", "path_b", "measure", "score")


@dataclass(frozen=True)
class PairScore:
    """Similarity ``score`` of the pair (id_a, id_b) under ``measure``; id_a < id_b."""

    id_a: str
    id_b: str
    measure: str
    score: float

    def __post_init__(self):
        if self.id_a == self.id_b:
            raise ValueError(f"self-pair {self.id_a!r} is not allowed")
        if self.id_a > self.id_b:
            a, b = self.id_b, self.id_a
            object.__setattr__(self, "id_a", a)
            object.__setattr__(self, "id_b", b)


def format_score(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if math.isnan(value):
        return "nan"
    return f"{value:.9g}"


def pair_scores_to_csv(scores: Iterable[PairScore]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PAIR_SCORE_FIELDS)
    for s in scores:
        w.writerow([s.id_a, s.id_b, s.measure, format_score(s.score)])
    return buf.getvalue()


def pair_scores_from_csv(text: str) -> List[PairScore]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != PAIR_SCORE_FIELDS:
        raise ManifestError(f"pair-score CSV header must be {','.join(PAIR_SCORE_FIELDS)}")
    return [PairScore(r["path_a"], r["path_b"], r["measure"], float(r["score"])) for r in reader]
