import json

import pytest

from retriever.data import (
    CandidatePool,
    DataError,
    PoolConfigError,
    Turn,
    build_pool,
    build_pools,
    describe_object,
    dump_catalog,
    dump_dialogues,
    generate_synthetic_corpus,
    load_catalog,
    load_dialogues,
    load_pools,
    load_simmc_catalog,
    load_simmc_dialogues,
    parse_catalog,
    parse_dialogues,
    turn_seed,
    write_json,
    write_pools,
)
from retriever.scoring import score_grounding

FASHION = {
    "objects": [
        {
            "id": "a1",
            "attributes": {
                "price": ["49"],
                "available sizes": ["XL", "XXL", "S", "XXS"],
                "color": ["black"],
                "type": ["jacket"],
                "brand": ["Kestrel"],
            },
        },
        {"id": "a2", "attributes": {"price": "12", "color": ["red", "white"]}},
    ]
}
DIALOGUES = {
    "dialogues": [
        {"id": "d1", "turns": [{"user": "what sizes?", "object_id": "a1", "response": "XL and S."}]},
        {
            "id": "d2",
            "turns": [
                {"user": "colors?", "object_id": "a2", "response": "red or white."},
                {"user": "price?", "object_id": "a2", "response": "12 dollars."},
            ],
        },
    ]
}


@pytest.fixture
def files(tmp_path):
    write_json(tmp_path / "catalog.json", FASHION)
    write_json(tmp_path / "dialogues.json", DIALOGUES)
    return tmp_path


class TestCatalog:
    def test_fashion_attributes(self, files):
        catalog = load_catalog(files / "catalog.json")
        a1 = catalog["a1"].attributes
        assert set(a1) == {"price", "available sizes", "color", "type", "brand"}
        assert a1["available sizes"] == ["XL", "XXL", "S", "XXS"]

    def test_scalar_values_become_lists(self, files):
        assert load_catalog(files / "catalog.json")["a2"].attributes["price"] == ["12"]

    def test_duplicate_id(self):
        raw = {"objects": [{"id": "x", "attributes": {}}, {"id": "x", "attributes": {}}]}
        with pytest.raises(DataError, match="duplicate object id 'x'"):
            parse_catalog(raw)

    @pytest.mark.parametrize(
        "attributes",
        [{"size: big": ["m"]}, {"colors": []}, {"colors": ["red. blue"]}, {"colors": ["  "]}, {"": ["x"]}],
    )
    def test_invalid_objects(self, attributes):
        with pytest.raises(DataError, match=r"objects\[0\]"):
            parse_catalog({"objects": [{"id": "x", "attributes": attributes}]})

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"objects": [', encoding="utf-8")
        with pytest.raises(DataError, match="bad.json.*malformed JSON"):
            load_catalog(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="nothere.json"):
            load_catalog(tmp_path / "nothere.json")

    def test_round_trip(self, files):
        catalog = load_catalog(files / "catalog.json")
        assert parse_catalog(json.loads(json.dumps(dump_catalog(catalog)))) == catalog


class TestDialogues:
    def test_turn_count(self, files):
        catalog = load_catalog(files / "catalog.json")
        turns = load_dialogues(files / "dialogues.json", catalog)
        assert len(turns) == 3
        assert turns[2] == Turn("d2", 1, "price?", "a2", "12 dollars.")

    def test_empty(self):
        assert parse_dialogues({"dialogues": []}, {}) == []

    def test_dangling_object(self, files):
        catalog = load_catalog(files / "catalog.json")
        raw = {"dialogues": [{"id": "d9", "turns": [{"user": "u", "object_id": "zz", "response": "r"}]}]}
        with pytest.raises(DataError, match="'d9' turn 0.*'zz'"):
            parse_dialogues(raw, catalog)

    def test_round_trip(self, files):
        catalog = load_catalog(files / "catalog.json")
        turns = load_dialogues(files / "dialogues.json", catalog)
        assert parse_dialogues(dump_dialogues(turns), catalog) == turns


class TestSimmc:
    def test_adapter(self, tmp_path):
        write_json(tmp_path / "meta.json", {"p7": {"attributes": {"color": ["blue"]}}, "p8": {"color": "red"}})
        raw = {
            "dialogue_data": [
                {
                    "dialogue_idx": 42,
                    "object_id": "p7",
                    "dialogue": [
                        {"turn_idx": 0, "transcript": "blue?", "system_transcript": "yes, blue."},
                        {"turn_idx": 1, "transcript": "and that?", "system_transcript": "red.", "object_id": "p8"},
                    ],
                }
            ]
        }
        write_json(tmp_path / "simmc.json", raw)
        catalog = load_simmc_catalog(tmp_path / "meta.json")
        turns = load_simmc_dialogues(tmp_path / "simmc.json", catalog)
        assert [t.referred_object_id for t in turns] == ["p7", "p8"]
        assert turns[1] == Turn("42", 1, "and that?", "p8", "red.")


TURN = Turn("d", 0, "what colors?", "o", "it comes in red.")
RESPONSES = [f"response {i}." for i in range(30)] + [TURN.true_response]


class TestBuildPool:
    def test_size_and_single_truth(self):
        pool = build_pool(TURN, RESPONSES, 5, 3)
        assert len(pool.candidates) == 5
        assert pool.candidates.count(TURN.true_response) == 1
        assert pool.candidates[pool.true_index] == TURN.true_response
        assert len(set(pool.candidates)) == 5

    def test_deterministic(self):
        assert build_pool(TURN, RESPONSES, 10, 7) == build_pool(TURN, RESPONSES, 10, 7)

    def test_duplicates_do_not_count(self):
        with pytest.raises(PoolConfigError, match="distinct distractors"):
            build_pool(TURN, ["a.", "a.", "b.", TURN.true_response], 4, 0)

    def test_pool_size_too_small(self):
        with pytest.raises(PoolConfigError):
            build_pool(TURN, RESPONSES, 1, 0)

    def test_turn_seeds_differ(self):
        other = Turn("d", 1, "", "o", "")
        assert turn_seed(0, TURN).generate_state(2).tolist() != turn_seed(0, other).generate_state(2).tolist()

    def test_pool_file_round_trip(self, tmp_path):
        catalog, turns = generate_synthetic_corpus(6, 30, seed=1)
        pools = build_pools(turns, catalog, 8, seed=2)
        write_pools(tmp_path / "pools.jsonl", pools)
        assert load_pools(tmp_path / "pools.jsonl") == pools
        first = json.loads((tmp_path / "pools.jsonl").read_text().splitlines()[0])
        assert {"dialogue_id", "turn_index", "candidates", "true_index"} <= first.keys()

    def test_pool_invariants(self):
        with pytest.raises(DataError):
            CandidatePool(["a"], 1)
        with pytest.raises(DataError):
            CandidatePool(["a", ""], 0)


class TestSyntheticCorpus:
    def test_responses_are_grounded(self):
        catalog, turns = generate_synthetic_corpus(20, 200, seed=3)
        for t in turns:
            obj = catalog[t.referred_object_id]
            assert score_grounding(t.true_response, obj) >= 1 / len(obj.attributes)

    def test_descriptions_fully_grounded(self):
        catalog, _ = generate_synthetic_corpus(20, 0, seed=3)
        for obj in catalog.values():
            assert score_grounding(describe_object(obj), obj) == 1.0

    def test_zero_turns(self):
        catalog, turns = generate_synthetic_corpus(3, 0, seed=0)
        assert turns == [] and len(catalog) == 3

    def test_deterministic(self):
        assert generate_synthetic_corpus(5, 17, seed=9) == generate_synthetic_corpus(5, 17, seed=9)
        assert generate_synthetic_corpus(5, 17, seed=9) != generate_synthetic_corpus(5, 17, seed=10)

    def test_turn_indices_restart_per_dialogue(self):
        _, turns = generate_synthetic_corpus(5, 40, seed=0)
        assert len(turns) == 40
        for prev, cur in zip(turns, turns[1:]):
            if cur.dialogue_id == prev.dialogue_id:
                assert cur.turn_index == prev.turn_index + 1
            else:
                assert cur.turn_index == 0
