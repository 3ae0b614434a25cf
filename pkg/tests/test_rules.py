from collections import Counter

from hypothesis import given, settings
from hypothesis import strategies as st

from edgeedit.corpus import parse_brat
from edgeedit.rules import (
    DictionarySet,
    RuleConfig,
    build_dictionaries,
    match_dictionary,
    parse_flip,
    read_dictionary,
    rule_extract,
)


def make_doc(tokens, doc_id="r"):
    """Build a document from (surface, label-or-None) tokens joined by spaces."""
    text, ann, pos, k = [], [], 0, 0
    for surface, label in tokens:
        if label is not None:
            k += 1
            ann.append(f"T{k}\t{label} {pos} {pos + len(surface)}\t{surface}")
        text.append(surface)
        pos += len(surface) + 1
    return parse_brat(" ".join(text), "\n".join(ann) + "\n", doc_id)


def edges(graph):
    return {(r.head, r.tail, r.label) for r in graph.edges()}


DICTS = DictionarySet.from_entries(solvent=["Water"], atmospheric=["air", "H2/Ar"], participant=["powders", "water"])


def test_match_dictionary_normalises():
    assert match_dictionary("H2/Ar", DICTS.atmospheric)
    assert match_dictionary("  AIR ", DICTS.atmospheric)
    assert not match_dictionary("SrCO3", DICTS.solvent)


def test_operations_are_chained_in_order():
    doc = make_doc([("mixed", "Operation"), ("then", None), ("fired", "Operation"), ("and", None), ("ground", "Operation")])
    assert edges(rule_extract(doc, DICTS)) == {(0, 1, "Next_Operation"), (1, 2, "Next_Operation")}


def test_unlisted_material_is_precursor_of_nearest_operation():
    doc = make_doc([("SrCO3", "Material"), ("was", None), ("mixed", "Operation"), (".", None), ("Then", None), ("fired", "Operation")])
    assert (0, 1, "Recipe_Precursor") in edges(rule_extract(doc, DICTS))


def test_precursor_search_crosses_sentences():
    doc = make_doc([("mixed", "Operation"), ("well.", None), ("The", None), ("SrCO3", "Material"), ("powder", None)])
    assert edges(rule_extract(doc, DICTS)) == {(1, 0, "Recipe_Precursor")}


def test_dictionary_priority_solvent_first():
    # "water" is in both solvent and participant
    doc = make_doc([("dissolved", "Operation"), ("in", None), ("water", "Material")])
    assert edges(rule_extract(doc, DICTS)) == {(0, 1, "Solvent_Material")}


def test_dictionary_material_needs_operation_in_sentence():
    doc = make_doc([("fired", "Operation"), ("twice.", None), ("The", None), ("air", "Material"), ("flowed", None)])
    assert edges(rule_extract(doc, DICTS)) == set()


def test_ties_go_to_preceding_entity():
    doc = make_doc([("mixed", "Operation"), ("SrCO3", "Material"), ("fired", "Operation")])
    assert (1, 0, "Recipe_Precursor") in edges(rule_extract(doc, DICTS))


def test_number_links_to_following_unit_only():
    doc = make_doc([("C", "Condition-Unit"), ("900", "Number"), ("K", "Condition-Unit"), ("heated", "Operation")])
    got = edges(rule_extract(doc, DICTS))
    assert (1, 2, "Number_Of") in got
    assert (1, 0, "Number_Of") not in got


def test_condition_type_looks_backwards():
    doc = make_doc([("h", "Condition-Unit"), ("duration", "Condition-Type"), ("K", "Condition-Unit")])
    assert (1, 0, "Type_Of") in edges(rule_extract(doc, DICTS))


def test_apparatus_prefers_preceding_operation():
    doc = make_doc([("fired", "Operation"), ("in", None), ("furnace", "Synthesis-Apparatus"), ("cooled", "Operation")])
    got = edges(rule_extract(doc, DICTS))
    assert (1, 0, "Apparatus_Of") in got


def test_apparatus_unit_search_is_document_wide():
    doc = make_doc([("furnace", "Synthesis-Apparatus"), ("used.", None), ("It", None), ("mm", "Apparatus-Unit")])
    assert (1, 0, "Apparatus_Attr_Of") in edges(rule_extract(doc, DICTS))


def test_sentence_scoped_rule_without_candidate_emits_nothing():
    doc = make_doc([("SrCO3", "Material"), ("used.", None), ("Grain", None), ("um", "Property-Unit")])
    assert not any(label == "Property_Of" for *_, label in edges(rule_extract(doc, DICTS)))


def test_single_entity_document_has_empty_graph():
    assert rule_extract(make_doc([("mixed", "Operation")]), DICTS).n_edges() == 0


def test_flip_reverses_one_label():
    doc = make_doc([("dissolved", "Operation"), ("in", None), ("water", "Material")])
    got = edges(rule_extract(doc, DICTS, RuleConfig(flip=parse_flip(["Solvent_Material"]))))
    assert got == {(1, 0, "Solvent_Material")}
    assert parse_flip(["A,B", "C"]) == {"A", "B", "C"}


def test_fixture_invariants(fixture_corpus, srmoo4_doc):
    for doc in fixture_corpus["train"] + [srmoo4_doc]:
        g = rule_extract(doc)
        labels = Counter(r.label for r in g.edges())
        n_ops = sum(e.label == "Operation" for e in doc.entities)
        assert labels["Next_Operation"] == max(0, n_ops - 1)
        assert labels["Recipe_Target"] == 0 and labels["Coref_Of"] == 0
        assert g == rule_extract(doc)


def test_procedure_document_operation_chain(srmoo4_doc):
    g = rule_extract(srmoo4_doc)
    ents = srmoo4_doc.entities
    nxt = {r.head: r.tail for r in g.edges() if r.label == "Next_Operation"}
    k = next(i for i, e in enumerate(ents) if e.surface == "prepared")
    walk = [ents[k].surface]
    while k in nxt:
        k = nxt[k]
        walk.append(ents[k].surface)
    assert walk[:6] == ["prepared", "mixed", "prefired", "obtained", "ground", "pelletized"]
    assert len(walk) == sum(e.label == "Operation" for e in ents)


LABELS = ["Operation", "Material", "Number", "Condition-Unit", "Property-Unit", "Synthesis-Apparatus", "Apparatus-Unit", "Brand"]


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(LABELS), st.booleans()), min_size=1, max_size=25))
def test_random_documents_respect_invariants(layout):
    tokens = []
    for k, (label, stop) in enumerate(layout):
        tokens.append((f"w{k}", label))
        if stop:
            tokens.append(("end.", None))
            tokens.append(("Next", None))
    doc = make_doc(tokens)
    g = rule_extract(doc, DICTS)
    labels = Counter(r.label for r in g.edges())
    assert labels["Next_Operation"] == max(0, sum(label == "Operation" for label, _ in layout) - 1)
    assert labels["Recipe_Target"] == 0 and labels["Coref_Of"] == 0
    assert g == rule_extract(doc, DICTS)


def test_shipped_dictionaries_are_normalised():
    shipped = DictionarySet.shipped()
    for name in ("solvent", "atmospheric", "participant"):
        entries = getattr(shipped, name)
        assert entries
        assert all(e == " ".join(e.casefold().split()) and e for e in entries)
    assert "water" in shipped.solvent


def test_dictionary_files_roundtrip(tmp_path):
    DICTS.save(tmp_path)
    (tmp_path / "solvent.dict").write_text("# comment\nWater\n\n", encoding="utf-8")
    assert read_dictionary(tmp_path / "solvent.dict") == ["Water"]
    assert DictionarySet.load(tmp_path) == DICTS


def test_build_dictionaries_from_gold(fixture_corpus):
    built = build_dictionaries(fixture_corpus["train"])
    for doc in fixture_corpus["train"]:
        for r in doc.relations:
            if r.label == "Solvent_Material":
                assert " ".join(doc.entities[r.tail].surface.casefold().split()) in built.solvent
