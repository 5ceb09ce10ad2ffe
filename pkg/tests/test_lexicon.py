import itertools
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from msce_scr import lexicon as lx
from msce_scr.numerics import Rng


def edit_table(a, b):
    """Full Wagner-Fischer table, kept separate from the library routine."""
    D = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        D[i][0] = i
    for j in range(len(b) + 1):
        D[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            D[i][j] = min(
                D[i - 1][j] + 1,
                D[i][j - 1] + 1,
                D[i - 1][j - 1] + (a[i - 1] != b[j - 1]),
            )
    return D[-1][-1]


def test_parse_lexicon():
    assert lx.parse_lexicon("kai\tk ai") == {"kai": ["k", "ai"]}
    assert lx.parse_lexicon("") == {}
    assert lx.parse_lexicon("# only a comment\n\n") == {}
    with pytest.raises(lx.DuplicateWordError):
        lx.parse_lexicon("kai\tk ai\nkai\tk a i")


def test_parse_lexicon_errors_carry_line_numbers():
    with pytest.raises(lx.ParseError) as e:
        lx.parse_lexicon("a\ta\nb b b\n")
    assert e.value.lineno == 2
    with pytest.raises(lx.ParseError):
        lx.parse_lexicon("a\t   \n")


def test_expand_command():
    lex = {"kai": ["k", "ai"], "da": ["d", "a"]}
    phones = lx.phone_inventory(lex)
    idx = {p: i for i, p in enumerate(phones)}
    c = lx.expand_command(["kai"], lex, 2)
    assert c.phones == ("k", "ai")
    assert c.states == (2 * idx["k"], 2 * idx["k"] + 1, 2 * idx["ai"], 2 * idx["ai"] + 1)
    c = lx.expand_command(["da", "kai"], lex, 1)
    assert c.phones == ("d", "a", "k", "ai")
    assert c.states == tuple(idx[p] for p in c.phones)
    with pytest.raises(lx.OOVError) as e:
        lx.expand_command(["xyz"], lex, 1)
    assert "xyz" in str(e.value)


def test_command_set_state_space():
    lex = {"a": ["x", "y"], "b": ["y", "z"]}
    cs = lx.CommandSet.build([["a"], ["b"]], lex, 5)
    assert cs.num_states == 15 and cs.blank == 15 and cs.output_units == 16
    for c in cs:
        assert len(c.states) == 5 * len(c.phones)
    with pytest.raises(lx.LexiconError):
        lx.CommandSet.build([["a"], ["a"]], lex, 5)


def test_levenshtein_examples():
    assert lx.phone_levenshtein(["k", "ai"], ["k", "ai"]) == 0
    assert lx.phone_levenshtein([], ["a", "b", "c"]) == 3
    a, b = list("kiten"), list("siting")
    assert edit_table(a, b) == 3
    assert lx.phone_levenshtein(a, b) == 3


seqs = st.lists(st.sampled_from("abcd"), max_size=6)


@given(seqs, seqs, seqs)
def test_levenshtein_metric(a, b, c):
    dab = lx.phone_levenshtein(a, b)
    assert dab == edit_table(a, b)
    assert dab == lx.phone_levenshtein(b, a)
    assert lx.phone_levenshtein(a, c) <= dab + lx.phone_levenshtein(b, c)


def toy_set(words):
    lex = {w: list(w) for w in words}
    return lx.CommandSet.build([[w] for w in words], lex, 1)


def test_pss_nearest_first():
    # c0=abcde, c1=vwxye (distance 4 from c0), c2=abcdz (distance 1)
    cs = toy_set(["abcde", "vwxye", "abcdz"])
    assert edit_table("abcde", "abcdz") == 1 and edit_table("abcde", "vwxye") == 4
    assert lx.build_pss_sets(cs, 2)[0] == (2, 1)


def test_pss_ties_by_id_and_boundary():
    cs = toy_set(["ab", "cd", "ef", "gh"])
    table = lx.build_pss_sets(cs, 2)
    assert table[0] == (1, 2)
    assert table[3] == (0, 1)
    full = lx.build_pss_sets(cs, 3)
    assert full[2] == (0, 1, 3)
    assert lx.build_pss_sets(cs, 3) == full
    for bad in (0, 4):
        with pytest.raises(lx.ConfigError):
            lx.build_pss_sets(cs, bad)


def test_rss_forced_and_singleton():
    cs = toy_set(["a", "b", "c", "d", "e"])
    rng = Rng(0, "rss")
    for t in range(5):
        assert lx.sample_rss(cs, t, 4, rng) == [c for c in range(5) if c != t]
        one = lx.sample_rss(cs, t, 1, rng)
        assert len(one) == 1 and one[0] != t
    with pytest.raises(lx.ConfigError):
        lx.sample_rss(cs, 0, 5, rng)


def test_hs_boundaries():
    cs = toy_set(["a", "b", "c", "d", "e", "f"])
    pool = lx.build_pss_sets(cs, 2)[0]

    class Forced:
        """Rng stand-in that pins the pool split to ``i``."""

        def __init__(self, i):
            self.i = i
            self.gen = Rng(1, f"hs{i}").gen
            real = self.gen

            class G:
                def integers(_, lo, hi, size=None):
                    if hi == 3 and size is None and not hasattr(self, "_done"):
                        self._done = True
                        return self.i
                    return real.integers(lo, hi, size=size)

                def choice(_, *a, **k):
                    return real.choice(*a, **k)

            self.gen = G()

    for _ in range(50):
        got = lx.sample_hs(cs, 0, 2, pool, Forced(2))
        assert set(got) <= set(pool)
    seen = set()
    for _ in range(200):
        got = lx.sample_hs(cs, 0, 2, pool, Forced(0))
        assert 0 not in got and len(set(got)) == 2
        seen.update(got)
    assert seen - set(pool)


def test_hs_small_pool_rejected():
    cs = toy_set(["a", "b", "c"])
    with pytest.raises(lx.ConfigError):
        lx.sample_hs(cs, 0, 2, (1,), Rng(0))


def test_confusion_dump_format():
    cs = toy_set(["abcde", "vwxye", "abcdz"])
    text = lx.dump_confusion_sets(cs, lx.build_pss_sets(cs, 2))
    assert text.splitlines()[0] == "0: 2,1  # d=1,4"


def test_parse_commands_and_files(tmp_path):
    (tmp_path / "lex.txt").write_text("# lex\nka\tk a\nti\tt i\n", encoding="utf-8")
    (tmp_path / "cmd.txt").write_text("ka ti  # first\nti ka\n", encoding="utf-8")
    cs = lx.CommandSet.from_files(tmp_path / "cmd.txt", tmp_path / "lex.txt", 2)
    assert [c.name for c in cs] == ["ka ti", "ti ka"]
    assert cs.phones == ["a", "i", "k", "t"]


def rss_pair_counts(cs, target, n, draws, rng):
    return Counter(tuple(lx.sample_rss(cs, target, n, rng)) for _ in range(draws))


def test_rss_uniform_pairs_small():
    cs = toy_set(["a", "b", "c", "d", "e", "f"])
    counts = rss_pair_counts(cs, 0, 2, 3000, Rng(5, "rss"))
    pairs = list(itertools.combinations(range(1, 6), 2))
    assert set(counts) == set(pairs)
