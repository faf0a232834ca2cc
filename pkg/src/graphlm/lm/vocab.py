"""Word-level vocabulary with reserved special and dummy graph tokens.

Pretokenization splits text into placeholder literals, words (letters,
digits, underscores) and single punctuation characters, so class names
like ``Neural_Networks`` stay one token and ``<gtok_k_i>`` placeholders
map to single reserved ids.
"""

import json
import re

from ..errors import ConfigError, DataError

PAD, UNK, END = "<pad>", "<unk>", "<end>"
_TOKEN_RE = re.compile(r"<gtok_\d+_\d+>|<end>|[A-Za-z0-9_]+|[^\sA-Za-z0-9_]")
_DUMMY_RE = re.compile(r"<gtok_(\d+)_(\d+)>$")


def dummy_token(gnn_index, token_index):
    return f"<gtok_{gnn_index}_{token_index}>"


def pretokenize(text):
    """Split text into surface tokens (no vocabulary needed)."""
    return _TOKEN_RE.findall(text)


class Vocabulary:
    """token <-> id maps; ids 0..2 are pad/unk/end, then the dummy block."""

    def __init__(self, tokens, k_max, t_max):
        self.tokens = list(tokens)
        self.k_max = k_max
        self.t_max = t_max
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ConfigError("vocabulary contains duplicate tokens")
        for i, special in enumerate((PAD, UNK, END)):
            if self.index.get(special) != i:
                raise ConfigError(f"special token {special} must sit at id {i}")
        self.pad_id = 0
        self.unk_id = 1
        self.end_id = 2
        self.dummy_ids = frozenset(
            self.index[dummy_token(k, i)]
            for k in range(k_max) for i in range(t_max)
        )

    def __len__(self):
        return len(self.tokens)

    def dummy_id(self, gnn_index, token_index):
        return self.index[dummy_token(gnn_index, token_index)]

    def is_dummy(self, token_id):
        return token_id in self.dummy_ids

    def encode(self, text):
        return [self.index.get(tok, self.unk_id) for tok in pretokenize(text)]

    def encode_tokens(self, tokens):
        return [self.index.get(tok, self.unk_id) for tok in tokens]

    def decode(self, ids, stop_at_end=False, skip_special=True):
        words = []
        for token_id in ids:
            token = self.tokens[token_id]
            if stop_at_end and token == END:
                break
            if skip_special and (token in (PAD, UNK, END) or token_id in self.dummy_ids):
                continue
            words.append(token)
        return " ".join(words)

    def save(self, path):
        manifest = {"k_max": self.k_max, "t_max": self.t_max, "version": 1}
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("#manifest " + json.dumps(manifest) + "\n")
            for token in self.tokens:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline()
            if not first.startswith("#manifest "):
                raise DataError(f"{path}: missing vocabulary manifest line")
            manifest = json.loads(first[len("#manifest "):])
            tokens = [line.rstrip("\n") for line in fh]
        return cls(tokens, manifest["k_max"], manifest["t_max"])


def build_vocab(texts, k_max=4, t_max=16):
    """Vocabulary over every token appearing in ``texts`` plus the specials."""
    tokens = [PAD, UNK, END]
    tokens += [dummy_token(k, i) for k in range(k_max) for i in range(t_max)]
    seen = set(tokens)
    for text in texts:
        for tok in pretokenize(text):
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)
    return Vocabulary(tokens, k_max, t_max)


def tokenize(text, vocab):
    """Token-id list; unknown surface tokens map to the unk id."""
    return vocab.encode(text)


def detokenize(ids, vocab):
    return vocab.decode(ids, skip_special=False)
