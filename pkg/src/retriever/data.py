"""Catalog and dialogue loading, candidate pools, and the synthetic grounded corpus.

File layouts (UTF-8 JSON):

* catalog: ``{"objects": [{"id": ..., "attributes": {name: [values]}}]}``
* dialogues: ``{"dialogues": [{"id": ..., "turns": [{"user": ..., "object_id": ..., "response": ...}]}]}``
* pools (JSON lines): ``{"dialogue_id", "turn_index", "candidates", "true_index"}`` plus the
  ``user`` request and the referred ``object`` so a pool file can be scored on its own.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Invalid input file or content; the message names the location."""


class PoolConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CatalogObject:
    object_id: str
    attributes: dict[str, list[str]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"id": self.object_id, "attributes": {k: list(v) for k, v in self.attributes.items()}}


@dataclass(frozen=True)
class Turn:
    dialogue_id: str
    turn_index: int
    user_utterance: str
    referred_object_id: str
    true_response: str

    @property
    def key(self) -> tuple[str, int]:
        return (self.dialogue_id, self.turn_index)


@dataclass(frozen=True)
class CandidatePool:
    candidates: list[str]
    true_index: int
    dialogue_id: str = ""
    turn_index: int = 0
    user_utterance: str = ""
    obj: CatalogObject | None = None

    def __post_init__(self):
        if not 0 <= self.true_index < len(self.candidates):
            raise DataError(f"true_index {self.true_index} outside pool of {len(self.candidates)}")
        if any(not c for c in self.candidates):
            raise DataError("pool contains an empty candidate")

    @property
    def true_response(self) -> str:
        return self.candidates[self.true_index]

    def to_json(self) -> dict:
        out = {
            "dialogue_id": self.dialogue_id,
            "turn_index": self.turn_index,
            "candidates": list(self.candidates),
            "true_index": self.true_index,
            "user": self.user_utterance,
        }
        if self.obj is not None:
            out["object"] = self.obj.to_json()
        return out


def validate_object(obj_id, attributes, where: str) -> CatalogObject:
    if not isinstance(obj_id, str) or not obj_id:
        raise DataError(f"{where}: object id must be a non-empty string")
    if not isinstance(attributes, Mapping):
        raise DataError(f"{where}: attributes of {obj_id!r} must be an object")
    clean: dict[str, list[str]] = {}
    for name, values in attributes.items():
        if ":" in name or not name.strip():
            raise DataError(f"{where}: attribute name {name!r} of {obj_id!r} is empty or contains ':'")
        if isinstance(values, (str, int, float)):
            values = [values]
        if not isinstance(values, list) or not values:
            raise DataError(f"{where}: attribute {name!r} of {obj_id!r} needs a non-empty value list")
        vals = [str(v) for v in values]
        for v in vals:
            if not v.strip() or ". " in v:
                raise DataError(f"{where}: value {v!r} of {obj_id!r}.{name} is empty or contains '. '")
        clean[name] = vals
    return CatalogObject(obj_id, clean)


def _read_json(path) -> object:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from None


def parse_catalog(raw, where: str = "<catalog>") -> dict[str, CatalogObject]:
    if not isinstance(raw, dict) or not isinstance(raw.get("objects"), list):
        raise DataError(f"{where}: expected {{'objects': [...]}}")
    catalog: dict[str, CatalogObject] = {}
    for i, entry in enumerate(raw["objects"]):
        loc = f"{where}: objects[{i}]"
        if not isinstance(entry, dict):
            raise DataError(f"{loc}: expected an object")
        obj = validate_object(entry.get("id"), entry.get("attributes", {}), loc)
        if obj.object_id in catalog:
            raise DataError(f"{loc}: duplicate object id {obj.object_id!r}")
        catalog[obj.object_id] = obj
    return catalog


def load_catalog(path) -> dict[str, CatalogObject]:
    return parse_catalog(_read_json(path), str(path))


def parse_dialogues(raw, catalog: Mapping[str, CatalogObject], where: str = "<dialogues>") -> list[Turn]:
    if not isinstance(raw, dict) or not isinstance(raw.get("dialogues"), list):
        raise DataError(f"{where}: expected {{'dialogues': [...]}}")
    turns = []
    for d, dialogue in enumerate(raw["dialogues"]):
        dlg_id = str(dialogue.get("id", d))
        for t, turn in enumerate(dialogue.get("turns", [])):
            loc = f"{where}: dialogue {dlg_id!r} turn {t}"
            try:
                user, obj_id, response = turn["user"], str(turn["object_id"]), turn["response"]
            except (KeyError, TypeError):
                raise DataError(f"{loc}: turns need 'user', 'object_id' and 'response'") from None
            if obj_id not in catalog:
                raise DataError(f"{loc}: object id {obj_id!r} not in catalog")
            turns.append(Turn(dlg_id, t, user, obj_id, response))
    return turns


def load_dialogues(path, catalog: Mapping[str, CatalogObject]) -> list[Turn]:
    return parse_dialogues(_read_json(path), catalog, str(path))


def dump_catalog(catalog: Mapping[str, CatalogObject]) -> dict:
    return {"objects": [obj.to_json() for obj in catalog.values()]}


def dump_dialogues(turns: Sequence[Turn]) -> dict:
    dialogues: dict[str, list[dict]] = {}
    for turn in turns:
        dialogues.setdefault(turn.dialogue_id, []).append(
            {"user": turn.user_utterance, "object_id": turn.referred_object_id, "response": turn.true_response}
        )
    return {"dialogues": [{"id": k, "turns": v} for k, v in dialogues.items()]}


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


# SIMMC Fashion adapter

SIMMC_FIELDS = {
    "dialogues": "dialogue_data",
    "dialogue_id": "dialogue_idx",
    "turns": "dialogue",
    "turn_index": "turn_idx",
    "user": "transcript",
    "response": "system_transcript",
}


def load_simmc_dialogues(
    path, catalog: Mapping[str, CatalogObject], object_field: str = "object_id"
) -> list[Turn]:
    """Read the published SIMMC Fashion dialogue layout.

    The referred object comes from ``object_field`` on the turn, falling back
    to the same key on the dialogue.
    """
    raw = _read_json(path)
    f = SIMMC_FIELDS
    if not isinstance(raw, dict) or not isinstance(raw.get(f["dialogues"]), list):
        raise DataError(f"{path}: expected a {f['dialogues']!r} list")
    turns = []
    for d, dialogue in enumerate(raw[f["dialogues"]]):
        dlg_id = str(dialogue.get(f["dialogue_id"], d))
        for t, turn in enumerate(dialogue.get(f["turns"], [])):
            loc = f"{path}: dialogue {dlg_id!r} turn {t}"
            obj_id = turn.get(object_field, dialogue.get(object_field))
            if obj_id is None or str(obj_id) not in catalog:
                raise DataError(f"{loc}: object id {obj_id!r} not in catalog")
            if f["user"] not in turn or f["response"] not in turn:
                raise DataError(f"{loc}: missing {f['user']!r} or {f['response']!r}")
            turns.append(Turn(dlg_id, int(turn.get(f["turn_index"], t)), turn[f["user"]], str(obj_id), turn[f["response"]]))
    return turns


def load_simmc_catalog(path) -> dict[str, CatalogObject]:
    """Read a metadata file keyed by object id whose entries hold an ``attributes`` map (or are that map)."""
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise DataError(f"{path}: expected an object keyed by object id")
    catalog = {}
    for obj_id, entry in raw.items():
        attrs = entry.get("attributes", entry) if isinstance(entry, dict) else entry
        catalog[str(obj_id)] = validate_object(str(obj_id), attrs, f"{path}: {obj_id}")
    return catalog


# pools


def turn_seed(seed: int, turn: Turn) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(zlib.crc32(turn.dialogue_id.encode("utf-8")), turn.turn_index))


def build_pool(turn: Turn, all_responses: Iterable[str], pool_size: int, seed, obj: CatalogObject | None = None) -> CandidatePool:
    """Place the true response at a random position among sampled distractors.

    Distractors are distinct responses (other than the true one) drawn without replacement.
    """
    if pool_size < 2:
        raise PoolConfigError(f"pool_size must be >= 2, got {pool_size}")
    others = [r for r in dict.fromkeys(all_responses) if r != turn.true_response]
    if len(others) < pool_size - 1:
        raise PoolConfigError(
            f"need {pool_size - 1} distinct distractors for {turn.dialogue_id}/{turn.turn_index}, found {len(others)}"
        )
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(others), size=pool_size - 1, replace=False)
    candidates = [others[i] for i in picks]
    true_index = int(rng.integers(pool_size))
    candidates.insert(true_index, turn.true_response)
    return CandidatePool(candidates, true_index, turn.dialogue_id, turn.turn_index, turn.user_utterance, obj)


def build_pools(turns: Sequence[Turn], catalog: Mapping[str, CatalogObject], pool_size: int, seed: int) -> list[CandidatePool]:
    responses = [t.true_response for t in turns]
    return [build_pool(t, responses, pool_size, turn_seed(seed, t), catalog[t.referred_object_id]) for t in turns]


def write_pools(path, pools: Sequence[CandidatePool]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for pool in pools:
            f.write(json.dumps(pool.to_json(), ensure_ascii=False) + "\n")


def load_pools(path) -> list[CandidatePool]:
    pools = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            obj = rec.get("object")
            pools.append(
                CandidatePool(
                    list(rec["candidates"]),
                    int(rec["true_index"]),
                    str(rec["dialogue_id"]),
                    int(rec["turn_index"]),
                    rec.get("user", ""),
                    validate_object(obj["id"], obj["attributes"], f"{path}:{n}") if obj else None,
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise DataError(f"{path}:{n}: bad pool record ({e})") from None
    return pools


# synthetic corpus

COLORS = ["red", "blue", "green", "black", "white", "yellow", "pink", "grey", "navy", "beige", "olive", "maroon"]
SIZES = ["xs", "s", "m", "l", "xl", "xxl"]
BRANDS = ["brightline", "nordvale", "kestrel", "ambergrove", "lumen", "solace", "tidewater", "hollis", "marrow", "quillon"]
TYPES = ["dress", "jacket", "skirt", "blouse", "sweater", "trousers", "coat", "shirt", "hoodie", "vest"]


def _and_join(values: Sequence[str]) -> str:
    return values[0] if len(values) == 1 else ", ".join(values[:-1]) + " and " + values[-1]


# (request paraphrases, response template); templates avoid words that are also attribute values
REQUESTS = {
    "colors": (
        ["what colors does this come in?", "is this available in other colors?", "which colors do you have for this?"],
        lambda a: f"it comes in {_and_join(a['colors'])}.",
    ),
    "available sizes": (
        ["what sizes are available?", "which sizes do you have for this?", "do you have this in my size?"],
        lambda a: f"we have it in sizes {_and_join(a['available sizes'])}.",
    ),
    "price": (
        ["how much does this cost?", "what is the price of this one?", "is this expensive?"],
        lambda a: f"this one costs {a['price'][0]} dollars.",
    ),
    "brand": (
        ["who makes this?", "what brand is this?", "which label is this from?"],
        lambda a: f"this is made by {a['brand'][0]}.",
    ),
    "type": (
        ["what kind of item is this?", "what am i looking at here?"],
        lambda a: f"that is a {a['type'][0]}.",
    ),
    "summary": (
        ["can you tell me about this?", "give me the details on this one."],
        lambda a: f"that is a {a['type'][0]} by {a['brand'][0]} for {a['price'][0]} dollars.",
    ),
}


def describe_object(obj: CatalogObject) -> str:
    """A response mentioning every attribute of a synthetic object."""
    a = obj.attributes
    return (
        f"this {a['type'][0]} by {a['brand'][0]} comes in {_and_join(a['colors'])}, "
        f"sizes {_and_join(a['available sizes'])}, for {a['price'][0]} dollars."
    )


def generate_catalog(num_objects: int, rng: np.random.Generator) -> dict[str, CatalogObject]:
    # prices are unique per object so every object has one attribute no other object shares
    prices = rng.choice(np.arange(10, 10 + max(500, 2 * num_objects)), size=num_objects, replace=False)
    catalog = {}
    for i in range(num_objects):
        colors = rng.choice(len(COLORS), size=int(rng.integers(1, 4)), replace=False)
        sizes = np.sort(rng.choice(len(SIZES), size=int(rng.integers(2, 5)), replace=False))
        obj_id = f"obj-{i:04d}"
        catalog[obj_id] = CatalogObject(
            obj_id,
            {
                "available sizes": [SIZES[j] for j in sizes],
                "brand": [BRANDS[int(rng.integers(len(BRANDS)))]],
                "colors": [COLORS[j] for j in colors],
                "price": [str(int(prices[i]))],
                "type": [TYPES[int(rng.integers(len(TYPES)))]],
            },
        )
    return catalog


def generate_synthetic_corpus(num_objects: int, num_turns: int, seed: int, max_turns_per_dialogue: int = 4):
    """Random catalog plus templated request/response turns; deterministic in ``seed``."""
    if num_objects < 1 or num_turns < 0:
        raise ValueError("num_objects must be >= 1 and num_turns >= 0")
    rng = np.random.default_rng(seed)
    catalog = generate_catalog(num_objects, rng)
    ids = list(catalog)
    kinds = list(REQUESTS)
    turns: list[Turn] = []
    dialogue = 0
    while len(turns) < num_turns:
        length = min(int(rng.integers(1, max_turns_per_dialogue + 1)), num_turns - len(turns))
        for t in range(length):
            obj = catalog[ids[int(rng.integers(len(ids)))]]
            paraphrases, template = REQUESTS[kinds[int(rng.integers(len(kinds)))]]
            user = paraphrases[int(rng.integers(len(paraphrases)))]
            turns.append(Turn(f"dlg-{dialogue:04d}", t, user, obj.object_id, template(obj.attributes)))
        dialogue += 1
    return catalog, turns
