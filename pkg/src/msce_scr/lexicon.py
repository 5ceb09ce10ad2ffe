"""Commands, lexicon expansion and confusing-set construction.

Emission-state ids are ``phone_index * S + k`` for ``k < S``; the blank unit
takes the id right after the last state, ``len(phones) * S``.
"""

from dataclasses import dataclass, field


class LexiconError(ValueError):
    pass


class ParseError(LexiconError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class DuplicateWordError(LexiconError):
    pass


class OOVError(LexiconError):
    def __init__(self, word):
        super().__init__(f"out-of-vocabulary word: {word!r}")
        self.word = word


class ConfigError(ValueError):
    pass


def _content_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if line.strip():
            yield lineno, line


def parse_lexicon(text):
    """Parse ``word<TAB>phone phone ...`` lines into an ordered dict."""
    entries = {}
    for lineno, line in _content_lines(text):
        if "\t" not in line:
            raise ParseError(lineno, "expected word<TAB>phones")
        word, phones = line.split("\t", 1)
        word = word.strip()
        phones = phones.split()
        if not word:
            raise ParseError(lineno, "empty word")
        if not phones:
            raise ParseError(lineno, f"empty pronunciation for {word!r}")
        if word in entries:
            raise DuplicateWordError(f"line {lineno}: duplicate word {word!r}")
        entries[word] = phones
    return entries


def parse_commands(text):
    """One command per line, words separated by whitespace."""
    return [line.split() for _, line in _content_lines(text)]


def phone_inventory(lexicon):
    """Sorted list of every phone used in the lexicon."""
    return sorted({p for phones in lexicon.values() for p in phones})


@dataclass(frozen=True)
class Command:
    id: int
    text: tuple
    phones: tuple
    states: tuple

    @property
    def name(self):
        return " ".join(self.text)


def expand_command(text, lexicon, states_per_phone=5, phones=None, cid=0):
    """Build a Command from its word sequence.

    ``phones`` is the phone inventory fixing state ids; it defaults to the
    sorted inventory of ``lexicon``.
    """
    inventory = phones if phones is not None else phone_inventory(lexicon)
    index = {p: i for i, p in enumerate(inventory)}
    seq = []
    for word in text:
        if word not in lexicon:
            raise OOVError(word)
        seq.extend(lexicon[word])
    if not seq:
        raise LexiconError("command expands to no phones")
    S = states_per_phone
    states = tuple(index[p] * S + k for p in seq for k in range(S))
    return Command(cid, tuple(text), tuple(seq), states)


@dataclass
class CommandSet:
    commands: list
    phones: list
    states_per_phone: int = 5
    _by_text: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for c in self.commands:
            if c.text in self._by_text:
                raise LexiconError(f"duplicate command text: {c.name!r}")
            self._by_text[c.text] = c.id

    @classmethod
    def build(cls, command_texts, lexicon, states_per_phone=5):
        phones = phone_inventory(lexicon)
        cmds = [
            expand_command(t, lexicon, states_per_phone, phones, cid=i)
            for i, t in enumerate(command_texts)
        ]
        return cls(cmds, phones, states_per_phone)

    @classmethod
    def from_files(cls, commands_path, lexicon_path, states_per_phone=5):
        with open(lexicon_path, encoding="utf-8") as fh:
            lex = parse_lexicon(fh.read())
        with open(commands_path, encoding="utf-8") as fh:
            texts = parse_commands(fh.read())
        return cls.build(texts, lex, states_per_phone)

    def __len__(self):
        return len(self.commands)

    def __getitem__(self, cid):
        return self.commands[cid]

    @property
    def num_states(self):
        return len(self.phones) * self.states_per_phone

    @property
    def blank(self):
        return self.num_states

    @property
    def output_units(self):
        return self.num_states + 1

    def inventory_hash(self):
        import hashlib

        key = "\n".join(self.phones) + f"\nS={self.states_per_phone}"
        return hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]


def phone_levenshtein(a, b):
    """Unit-cost edit distance between two phone sequences."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, pa in enumerate(a, start=1):
        cur = [i]
        for j, pb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (pa != pb)))
        prev = cur
    return prev[-1]


def _check_n(command_set, n):
    if not 1 <= n <= len(command_set) - 1:
        raise ConfigError(f"confuser count {n} outside [1, {len(command_set) - 1}]")


def pss_distances(command_set):
    """Full pairwise phone-distance table as a list of lists."""
    cmds = command_set.commands
    return [[phone_levenshtein(a.phones, b.phones) for b in cmds] for a in cmds]


def build_pss_sets(command_set, n):
    """Top-``n`` most similar non-targets per command, ordered by (distance, id)."""
    _check_n(command_set, n)
    dist = pss_distances(command_set)
    table = {}
    for t in range(len(command_set)):
        others = sorted((dist[t][c], c) for c in range(len(command_set)) if c != t)
        table[t] = tuple(c for _, c in others[:n])
    return table


def sample_rss(command_set, target, n, rng):
    """Uniform ``n``-subset of the non-target commands."""
    _check_n(command_set, n)
    pool = [c for c in range(len(command_set)) if c != target]
    picked = rng.gen.choice(len(pool), size=n, replace=False)
    return sorted(pool[i] for i in picked)


def sample_hs(command_set, target, n, pss_pool, rng):
    """Hybrid draw: ``i`` from the similar pool and ``n - i`` from all non-targets.

    ``i`` is uniform on ``0..n``. Draws from the full pool that repeat an
    already chosen id are rejected and redrawn.
    """
    pool = [c for c in range(len(command_set)) if c != target]
    if len(pool) < n:
        raise ConfigError(f"only {len(pool)} non-target commands, need {n}")
    similar = [c for c in pss_pool if c != target]
    if len(similar) < n:
        raise ConfigError(f"similar pool for command {target} has {len(similar)} < {n} entries")
    i = int(rng.gen.integers(0, n + 1))
    chosen = [similar[k] for k in rng.gen.choice(len(similar), size=i, replace=False)]
    taken = set(chosen)
    while len(chosen) < n:
        c = pool[int(rng.gen.integers(0, len(pool)))]
        if c not in taken:
            taken.add(c)
            chosen.append(c)
    return sorted(chosen)


def dump_confusion_sets(command_set, table):
    """Text dump: ``target_id: id,id,...  # d=dist,dist,...``."""
    dist = pss_distances(command_set)
    lines = []
    for t in sorted(table):
        ids = table[t]
        ds = ",".join(str(dist[t][c]) for c in ids)
        lines.append(f"{t}: {','.join(map(str, ids))}  # d={ds}")
    return "\n".join(lines) + "\n"
