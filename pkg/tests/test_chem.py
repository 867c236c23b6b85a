import sys

import pytest

from dgflow.chem import (
    QM9_ALPHABET,
    ExternalScorer,
    ScorerError,
    SmilesError,
    canonical_form,
    check_edge_addition,
    check_valency,
    morgan_fingerprint,
    parse_smiles,
    score,
    tanimoto,
    write_smiles,
)
from dgflow.graphs import GraphError, LabeledGraph

C, N, O, F = 0, 1, 2, 3  # QM9 type ids


class TestValency:
    def test_four_single_bonds_on_carbon(self):
        g = LabeledGraph.build([C, C, C, C, C], [(0, i, 0) for i in range(1, 5)])
        assert check_valency(g, QM9_ALPHABET)

    def test_three_singles_plus_double_overflows(self):
        g = LabeledGraph.build([C, C, C, C, C],
                               [(0, 1, 0), (0, 2, 0), (0, 3, 0), (0, 4, 1)])
        assert not check_valency(g, QM9_ALPHABET)

    def test_double_bonded_oxygens(self):
        g = LabeledGraph.build([O, O], [(0, 1, 1)])
        assert check_valency(g, QM9_ALPHABET)

    def test_edge_addition_fresh_carbons(self):
        g = LabeledGraph.build([C, C])
        assert check_edge_addition(g, QM9_ALPHABET, 0, 1, 0)

    def test_edge_addition_triple_on_oxygen(self):
        g = LabeledGraph.build([O, C])
        assert not check_edge_addition(g, QM9_ALPHABET, 0, 1, 2)

    def test_no_edge_always_legal(self):
        g = LabeledGraph.build([F, F])
        assert check_edge_addition(g, QM9_ALPHABET, 0, 1, QM9_ALPHABET.no_edge_index)

    def test_existing_edge_rejected(self):
        g = LabeledGraph.build([C, C], [(0, 1, 0)])
        with pytest.raises(GraphError):
            check_edge_addition(g, QM9_ALPHABET, 0, 1, 0)

    def test_addition_agrees_with_post_insert_check(self, rng):
        # randomized agreement between the incremental and whole-graph checks
        for _ in range(300):
            n = int(rng.integers(2, 7))
            g = LabeledGraph.build(rng.integers(0, 4, size=n).tolist())
            for _e in range(int(rng.integers(1, 8))):
                i, j = map(int, rng.integers(0, n, size=2))
                if i == j or (min(i, j), max(i, j)) in {(a, b) for (a, b, _t) in g.edges}:
                    continue
                b = int(rng.integers(0, 3))
                ok = check_edge_addition(g, QM9_ALPHABET, i, j, b)
                candidate = g.with_edge(i, j, b)
                assert ok == check_valency(candidate, QM9_ALPHABET)
                if ok:
                    g = candidate


class TestSmiles:
    def test_cc(self):
        g = parse_smiles("CC")
        assert g.num_nodes == 2 and list(g.edges)[0][2] == 0

    def test_branch_grammar(self):
        # C(=O)O: carbon double-bonded to one O, single to another
        g = parse_smiles("C(=O)O", QM9_ALPHABET)
        assert g.node_types == (C, O, O)
        assert g.edges == frozenset({(0, 1, 1), (0, 2, 0)})

    def test_ring_closure(self):
        g = parse_smiles("C1CC1")
        assert g.num_nodes == 3 and len(g.edges) == 3

    def test_percent_ring_closure(self):
        g = parse_smiles("C%12CC%12")
        assert len(g.edges) == 3

    def test_bracket_atom(self):
        assert parse_smiles("[C][N]").node_types == parse_smiles("CN").node_types

    def test_errors_carry_offsets(self):
        with pytest.raises(SmilesError, match="offset 1"):
            parse_smiles("Cx")
        with pytest.raises(SmilesError, match="unclosed ring"):
            parse_smiles("C1CC")
        with pytest.raises(SmilesError, match="unmatched"):
            parse_smiles("CC)")
        with pytest.raises(SmilesError, match="unclosed branch"):
            parse_smiles("C(C")
        with pytest.raises(SmilesError, match="charges|unsupported"):
            parse_smiles("[C+]")

    def test_write_parse_round_trip(self, rng):
        from dgflow.datasets import random_molecules

        for g in random_molecules(100, QM9_ALPHABET, rng):
            text = write_smiles(g, QM9_ALPHABET)
            back = parse_smiles(text, QM9_ALPHABET)
            assert canonical_form(back, QM9_ALPHABET) == canonical_form(g, QM9_ALPHABET)


class TestCanonicalForm:
    def test_same_molecule_two_entries(self):
        assert canonical_form(parse_smiles("C(=O)O")) == canonical_form(parse_smiles("OC=O"))

    def test_bond_orders_distinguished(self):
        assert canonical_form(parse_smiles("CC")) != canonical_form(parse_smiles("C=C"))

    def test_permutation_invariance(self, rng):
        from dgflow.datasets import random_molecules

        mols = random_molecules(100, QM9_ALPHABET, rng)
        for g in mols:
            want = canonical_form(g, QM9_ALPHABET)
            for _ in range(10):
                perm = rng.permutation(g.num_nodes).tolist()
                assert canonical_form(g.relabel(perm), QM9_ALPHABET) == want

    def test_heavy_permutation_sweep(self, rng):
        # 1000 permutations across a handful of molecules
        from dgflow.datasets import random_molecules

        mols = random_molecules(10, QM9_ALPHABET, rng, max_nodes=8)
        for g in mols:
            want = canonical_form(g, QM9_ALPHABET)
            for _ in range(100):
                perm = rng.permutation(g.num_nodes).tolist()
                assert canonical_form(g.relabel(perm), QM9_ALPHABET) == want


class TestFingerprints:
    def test_self_similarity(self):
        f = morgan_fingerprint(parse_smiles("C1CC1C(=O)O"))
        assert tanimoto(f, f) == 1.0

    def test_disjoint_atoms(self):
        f1 = morgan_fingerprint(parse_smiles("C"))
        f2 = morgan_fingerprint(parse_smiles("O"))
        assert tanimoto(f1, f2) < 1.0

    def test_empty_convention(self):
        assert tanimoto(frozenset(), frozenset()) == 1.0

    def test_symmetry_and_range(self, rng):
        from dgflow.datasets import random_molecules

        mols = random_molecules(20, QM9_ALPHABET, rng)
        fps = [morgan_fingerprint(g) for g in mols]
        for i in range(0, 20, 3):
            for j in range(0, 20, 4):
                t1 = tanimoto(fps[i], fps[j])
                assert 0.0 <= t1 <= 1.0
                assert t1 == tanimoto(fps[j], fps[i])

    def test_isomorphism_invariance(self, rng):
        from dgflow.datasets import random_molecules

        for g in random_molecules(20, QM9_ALPHABET, rng):
            perm = rng.permutation(g.num_nodes).tolist()
            assert morgan_fingerprint(g) == morgan_fingerprint(g.relabel(perm))


class TestScorers:
    def test_atoms(self):
        assert score(parse_smiles("CCC"), "atoms") == 3.0

    def test_plogp_proxy_ring(self):
        # longest carbon chain 3 minus one ring
        assert score(parse_smiles("C1CC1"), "plogp-proxy") == 2.0

    def test_plogp_proxy_chain(self):
        assert score(parse_smiles("CCCC"), "plogp-proxy") == 4.0

    def test_external_echo(self):
        cmd = (f"{sys.executable} -c \""
               "import sys\n"
               "for line in sys.stdin:\n"
               "    parts = line.split()\n"
               "    if parts[0] == 'QUIT': break\n"
               "    print(0.5); sys.stdout.flush()\n"
               "\"")
        with ExternalScorer(cmd, timeout=10.0) as scorer:
            assert score(parse_smiles("CC"), scorer) == 0.5

    def test_external_error_reply(self):
        cmd = (f"{sys.executable} -c \""
               "import sys\n"
               "for line in sys.stdin:\n"
               "    if line.startswith('QUIT'): break\n"
               "    print('ERR boom'); sys.stdout.flush()\n"
               "\"")
        with ExternalScorer(cmd, timeout=10.0) as scorer:
            with pytest.raises(ScorerError, match="boom"):
                scorer.score("CC")

    def test_external_timeout(self):
        cmd = f"{sys.executable} -c \"import time; time.sleep(60)\""
        scorer = ExternalScorer(cmd, timeout=0.2)
        with pytest.raises(ScorerError, match="timeout"):
            scorer.score("CC")
