"""The fast system: style-partitioned episodic memory with two-layer retrieval.

Layer 1 filters stored frames by weighted Manhattan distance between the
9-value scenario descriptions; layer 2 picks the survivor whose textual
experience is most cosine-similar to the current one.  Embeddings are a
deterministic 64-bucket hashed bag of tokens, so retrieval is bit-reproducible
and needs no model downloads.  When nothing matches, the threshold widens,
then the general block is consulted, then a neutral default action is
returned.

The store is read-mostly at test time (many concurrent readers); training
inserts happen in one task between episodes.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from dualdrive.core import (
    STYLE_ORDER,
    DrivingStyle,
    EpisodeOutcome,
    ExperienceDescription,
    MemoryUnit,
    MetaAction,
    ScenarioDescription,
    memory_to_record,
    record_to_memory,
)

UNSAFE_GAP = 0.5          # s, predicted arrival gap that marks a frame unsafe
UNSAFE_LOOKBACK = 1.0     # s dropped before each unsafe instant
FRAME_DT = 0.1            # s between consecutive frame indices

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class RetrievalConfig:
    # epsilon calibrated so 5-20% of a 10k-unit block survives layer 1 on
    # queries sampled from live episodes (measured: 9.3% mean / 6.7% median)
    epsilon: float = 10.0
    # weights per scenario slot: positions 1.0 /m, velocities 2.0 /(m/s), conflict 3.0 /s
    weights: tuple = (1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0)
    widen_factor: float = 2.0
    max_widenings: int = 2
    embedding_dim: int = 64

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if len(self.weights) != 9 or any(w < 0 for w in self.weights):
            raise ValueError("weights must be 9 non-negative numbers")


def tokenize_experience(e: ExperienceDescription) -> list[str]:
    intention = e.intention.value if e.intention is not None else ""
    text = "|".join((intention, e.style.value, e.instruction, e.ehmi)).lower()
    return _TOKEN_RE.findall(text)


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.md5(b"tok0|" + token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dim


def embed_experience(e: ExperienceDescription, dim: int = 64) -> np.ndarray:
    """Deterministic hashed bag-of-tokens embedding, L2-normalized (or the
    zero vector for empty text)."""
    vec = np.zeros(dim, dtype=float)
    for token in tokenize_experience(e):
        vec[_bucket(token, dim)] += 1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def weighted_manhattan(a, b, weights) -> float:
    """Layer-1 scenario distance."""
    return float(sum(w * abs(x - y) for w, x, y in zip(weights, a, b)))


class MemoryBlock:
    """Insertion-ordered units of one driving style plus cached matrices."""

    def __init__(self, style: DrivingStyle):
        self.style = style
        self.units: list[MemoryUnit] = []
        self._cache: Optional[dict] = None
        self._cache_dim = 0

    def __len__(self) -> int:
        return len(self.units)

    def append(self, unit: MemoryUnit) -> None:
        if unit.experience.style is not self.style:
            raise ValueError(
                f"unit style {unit.experience.style.value} does not match block {self.style.value}"
            )
        self.units.append(unit)
        self._cache = None

    def _extend_unchecked(self, units: list[MemoryUnit]) -> None:
        self.units.extend(units)
        self._cache = None

    def cache(self, dim: int) -> dict:
        if self._cache is None or self._cache_dim != dim:
            self._cache_dim = dim
            if self.units:
                scenarios = np.array([u.scenario.values for u in self.units], dtype=float)
                embeddings = np.stack([embed_experience(u.experience, dim) for u in self.units])
                episodes = np.array([u.episode_id for u in self.units], dtype=np.int64)
                frames = np.array([u.frame_index for u in self.units], dtype=np.int64)
                lo, hi = scenarios.min(axis=0), scenarios.max(axis=0)
            else:
                scenarios = np.zeros((0, 9), dtype=float)
                embeddings = np.zeros((0, dim), dtype=float)
                episodes = np.zeros(0, dtype=np.int64)
                frames = np.zeros(0, dtype=np.int64)
                lo, hi = np.zeros(9), np.ones(9)
            self._cache = {
                "scenarios": scenarios, "embeddings": embeddings,
                "episodes": episodes, "frames": frames, "lo": lo, "hi": hi,
            }
        return self._cache


class MemoryStore:
    """Union of disjoint style-keyed blocks."""

    def __init__(self):
        self.blocks: dict[DrivingStyle, MemoryBlock] = {
            style: MemoryBlock(style) for style in STYLE_ORDER
        }
        self._pooled: Optional[MemoryBlock] = None
        self._pooled_size = -1

    def __len__(self) -> int:
        return sum(len(b) for b in self.blocks.values())

    def block(self, style: DrivingStyle) -> MemoryBlock:
        return self.blocks[style]

    def iter_units(self) -> Iterable[MemoryUnit]:
        for style in STYLE_ORDER:
            yield from self.blocks[style].units

    def pooled_block(self) -> MemoryBlock:
        """All blocks concatenated in canonical style order (cached)."""
        if self._pooled is None or self._pooled_size != len(self):
            pooled = MemoryBlock(DrivingStyle.GENERAL)
            pooled._extend_unchecked(list(self.iter_units()))
            self._pooled = pooled
            self._pooled_size = len(self)
        return self._pooled

    def next_episode_id(self) -> int:
        ids = [u.episode_id for u in self.iter_units()]
        return max(ids) + 1 if ids else 0


def insert(store: MemoryStore, m: MemoryUnit) -> MemoryStore:
    """Append the unit to exactly the block matching its experience style."""
    store.block(m.experience.style).append(m)
    return store


def curate_episode(frames: list[MemoryUnit], outcome: EpisodeOutcome,
                   ttc_gaps: list[float]) -> list[MemoryUnit]:
    """Keep only frames worth remembering.

    Failed episodes (collision, deadlock, timeout) contribute nothing.  In
    successful ones, every frame within 1 s before an instant whose predicted
    arrival gap dropped below 0.5 s is dropped; order is preserved.
    """
    if outcome is not EpisodeOutcome.SUCCESS:
        return []
    if len(frames) != len(ttc_gaps):
        raise ValueError("frames and ttc_gaps must align")
    unsafe_times = [f.frame_index * FRAME_DT
                    for f, gap in zip(frames, ttc_gaps) if gap < UNSAFE_GAP]
    if not unsafe_times:
        return list(frames)
    kept = []
    for frame in frames:
        t = frame.frame_index * FRAME_DT
        if any(tu - UNSAFE_LOOKBACK - 1e-9 <= t <= tu + 1e-9 for tu in unsafe_times):
            continue
        kept.append(frame)
    return kept


@dataclass(frozen=True)
class FilteredUnit:
    unit: MemoryUnit
    distance: float


def scenario_filter(block: MemoryBlock, s_c: ScenarioDescription, cfg: RetrievalConfig,
                    epsilon: Optional[float] = None) -> list[FilteredUnit]:
    """Layer 1: weighted Manhattan filter, insertion order preserved."""
    eps = cfg.epsilon if epsilon is None else epsilon
    if not len(block):
        return []
    cache = block.cache(cfg.embedding_dim)
    w = np.asarray(cfg.weights, dtype=float)
    d = np.abs(cache["scenarios"] - np.asarray(s_c.values)) @ w
    return [FilteredUnit(block.units[i], float(d[i])) for i in np.nonzero(d < eps)[0]]


def select_by_experience(F: list[FilteredUnit], e_c: ExperienceDescription,
                         dim: int = 64) -> MemoryUnit:
    """Layer 2: cosine argmax over the survivors.

    Ties break to the smaller layer-1 distance, then the smaller
    (episode_id, frame_index).
    """
    if not F:
        raise ValueError("experience selection requires a non-empty filtered set")
    query = embed_experience(e_c, dim)
    best = None
    for item in F:
        sim = cosine_similarity(query, embed_experience(item.unit.experience, dim))
        rank = (-sim, item.distance, item.unit.episode_id, item.unit.frame_index)
        if best is None or rank < best[0]:
            best = (rank, item.unit)
    return best[1]


@dataclass(frozen=True)
class Provenance:
    source: str                               # "memory" | "default"
    block: Optional[DrivingStyle] = None
    episode_id: Optional[int] = None
    frame_index: Optional[int] = None
    distance: Optional[float] = None
    similarity: Optional[float] = None
    widenings: int = 0
    general_fallback: bool = False
    scanned: int = 0

    def describe(self) -> str:
        if self.source == "default":
            return "default"
        block = self.block.value if self.block else "pooled"
        return f"{block}:{self.episode_id}/{self.frame_index}"


def _best_two_layer(block: MemoryBlock, s_c: ScenarioDescription,
                    e_c: ExperienceDescription, cfg: RetrievalConfig, epsilon: float):
    """Vectorized filter + selection.  Returns ((unit, d, sim) | None, scanned)."""
    n = len(block)
    if n == 0:
        return None, 0
    cache = block.cache(cfg.embedding_dim)
    w = np.asarray(cfg.weights, dtype=float)
    d = np.abs(cache["scenarios"] - np.asarray(s_c.values)) @ w
    idx = np.nonzero(d < epsilon)[0]
    if idx.size == 0:
        return None, n
    query = embed_experience(e_c, cfg.embedding_dim)
    sims = cache["embeddings"][idx] @ query
    # lexsort uses the last key as primary: similarity desc, distance asc, id asc
    order = np.lexsort((cache["frames"][idx], cache["episodes"][idx], d[idx], -sims))
    pick = int(idx[order[0]])
    return (block.units[pick], float(d[pick]), float(sims[order[0]])), n


def _best_single_stage(block: MemoryBlock, s_c: ScenarioDescription,
                       e_c: ExperienceDescription, cfg: RetrievalConfig):
    """Flat variant: scenario values (min-max normalized per block) appended
    to the embedding, one cosine argmax, no scenario threshold."""
    n = len(block)
    if n == 0:
        return None, 0
    cache = block.cache(cfg.embedding_dim)
    if "stacked" not in cache:
        lo, hi = cache["lo"], cache["hi"]
        span = np.where(hi > lo, hi - lo, 1.0)
        stacked = np.concatenate([cache["embeddings"],
                                  (cache["scenarios"] - lo) / span], axis=1)
        cache["span"] = span
        cache["stacked"] = stacked
        cache["stacked_norms"] = np.linalg.norm(stacked, axis=1)
    query = np.concatenate([
        embed_experience(e_c, cfg.embedding_dim),
        (np.asarray(s_c.values) - cache["lo"]) / cache["span"],
    ])
    qn = float(np.linalg.norm(query))
    sims = cache["stacked"] @ query
    denom = cache["stacked_norms"] * qn
    good = denom > 0
    np.divide(sims, denom, out=sims, where=good)
    sims[~good] = 0.0
    order = np.lexsort((cache["frames"], cache["episodes"], -sims))
    pick = int(order[0])
    return (block.units[pick], float(sims[pick])), n


def retrieve(store: MemoryStore, style: DrivingStyle, s_c: ScenarioDescription,
             e_c: ExperienceDescription, cfg: RetrievalConfig,
             partitioned: bool = True, two_layer: bool = True
             ) -> tuple[MetaAction, Provenance]:
    """Full retrieval pipeline; total (always returns an action).

    Partitioned: scan the block for the inferred style, widening the scenario
    threshold up to ``max_widenings`` times, then retry on the general block
    (fresh threshold), then fall back to a neutral maintain.
    ``partitioned=False`` pools every block into one scan; ``two_layer=False``
    replaces both layers with a single concatenated cosine argmax.
    """
    if partitioned:
        plan = [(style, store.block(style))]
        if style is not DrivingStyle.GENERAL:
            plan.append((DrivingStyle.GENERAL, store.block(DrivingStyle.GENERAL)))
    else:
        plan = [(None, store.pooled_block())]

    scanned = 0
    for stage, (block_style, block) in enumerate(plan):
        fell_back = stage > 0
        if not two_layer:
            found, n = _best_single_stage(block, s_c, e_c, cfg)
            scanned += n
            if found:
                unit, sim = found
                return unit.action, Provenance(
                    source="memory", block=block_style,
                    episode_id=unit.episode_id, frame_index=unit.frame_index,
                    similarity=sim, general_fallback=fell_back, scanned=scanned,
                )
            continue
        epsilon = cfg.epsilon
        for attempt in range(cfg.max_widenings + 1):
            found, n = _best_two_layer(block, s_c, e_c, cfg, epsilon)
            scanned += n
            if found:
                unit, dist, sim = found
                return unit.action, Provenance(
                    source="memory", block=block_style,
                    episode_id=unit.episode_id, frame_index=unit.frame_index,
                    distance=dist, similarity=sim,
                    widenings=attempt, general_fallback=fell_back, scanned=scanned,
                )
            if n == 0:
                break   # empty block: widening cannot help
            epsilon *= cfg.widen_factor

    return MetaAction.MAINTAIN, Provenance(
        source="default", widenings=cfg.max_widenings if two_layer else 0,
        general_fallback=partitioned and style is not DrivingStyle.GENERAL,
        scanned=scanned,
    )


def save_store(store: MemoryStore, path) -> None:
    """JSONL persistence, blocks concatenated in canonical style order."""
    with open(path, "w", encoding="utf-8") as fh:
        for unit in store.iter_units():
            fh.write(memory_to_record(unit) + "\n")


def load_store(path) -> MemoryStore:
    store = MemoryStore()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            insert(store, record_to_memory(line, line_no))
    return store
