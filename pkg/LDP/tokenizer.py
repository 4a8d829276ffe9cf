'''
Whitespace + punctuation word tokeniser with byte fallback, and prompt presets.

Normalisation (shared with the NLG metrics): lowercase, then split into runs of word
characters and single punctuation characters. Words missing from the vocabulary are
encoded as their UTF-8 bytes.
'''

import json
import os
import re
from collections import Counter

try:
    from LDP.errors import ConfigError, DataError, VocabularyError
except ModuleNotFoundError:
    from errors import ConfigError, DataError, VocabularyError

PAD = '<pad>'
BOS = '<bos>'
EOS = '<eos>'
UNK = '<unk>'
SPECIAL_TOKENS = [PAD, BOS, EOS, UNK]
BYTE_TOKENS = [f'<0x{value:02X}>' for value in range(256)]
VOCAB_SCHEMA = 'ldp.vocab/1'

PROMPT_PRESETS = ('none', 'minimal', 'structured_report')
DATA_DIR = os.path.join(os.path.dirname(os.path.realpath(__file__)), 'data')

_TOKEN_PATTERN = re.compile(r'\w+|[^\w\s]')


def tokenize_text(text):
    """
    Frozen normalisation: lowercase, whitespace split, punctuation split off as single tokens
    :param text: String
    :return: List of word tokens
    """
    return _TOKEN_PATTERN.findall(text.lower())


class Vocabulary:
    """ Token <-> id mapping; ids 0-3 are special tokens, 4-259 the byte fallback, words after """

    def __init__(self, tokens):
        if tokens[:len(SPECIAL_TOKENS)] != SPECIAL_TOKENS or \
                tokens[len(SPECIAL_TOKENS):len(SPECIAL_TOKENS) + 256] != BYTE_TOKENS:
            raise ConfigError('vocabulary must start with the special and byte tokens')
        self.tokens = list(tokens)
        self.index = {token: i for i, token in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ConfigError('vocabulary contains duplicate tokens')

    @classmethod
    def build(cls, texts, max_size=512):
        """
        Build a vocabulary from training texts, most frequent words first (ties alphabetical)
        :param texts: Iterable of strings
        :param max_size: Total size cap including special and byte tokens
        :return: Vocabulary
        """
        base = SPECIAL_TOKENS + BYTE_TOKENS
        if max_size < len(base):
            raise ConfigError(f'vocabulary size must be at least {len(base)}')
        counts = Counter(word for text in texts for word in tokenize_text(text))
        words = sorted(counts, key=lambda word: (-counts[word], word))
        return cls(base + words[:max_size - len(base)])

    def __len__(self):
        return len(self.tokens)

    @property
    def pad_id(self):
        return self.index[PAD]

    @property
    def bos_id(self):
        return self.index[BOS]

    @property
    def eos_id(self):
        return self.index[EOS]

    def encode(self, text, add_bos=False, add_eos=False):
        ids = [self.bos_id] if add_bos else []
        for word in tokenize_text(text):
            if word in self.index:
                ids.append(self.index[word])
            else:
                ids.extend(self.index[BYTE_TOKENS[value]] for value in word.encode('utf-8'))
        if add_eos:
            ids.append(self.eos_id)
        return ids

    def decode(self, ids):
        """ Special tokens are dropped, consecutive byte tokens are joined back into one word """
        words = []
        pending = bytearray()
        for token_id in ids:
            token_id = int(token_id)
            if token_id < 0 or token_id >= len(self.tokens):
                raise VocabularyError(f'token id {token_id} outside vocabulary of size {len(self.tokens)}')
            token = self.tokens[token_id]
            if token in BYTE_TOKENS:
                pending.append(int(token[3:5], 16))
                continue
            if pending:
                words.append(pending.decode('utf-8', errors='replace'))
                pending = bytearray()
            if token not in SPECIAL_TOKENS:
                words.append(token)
        if pending:
            words.append(pending.decode('utf-8', errors='replace'))
        return ' '.join(words)

    def save(self, path):
        with open(path, 'w') as out_file:
            json.dump({'schema': VOCAB_SCHEMA, 'tokens': self.tokens}, out_file, indent=0)
            out_file.write('\n')

    @classmethod
    def load(cls, path):
        with open(path, 'r') as in_file:
            record = json.load(in_file)
        if record.get('schema') != VOCAB_SCHEMA:
            raise DataError(f'{path} is not a {VOCAB_SCHEMA} file')
        return cls(record['tokens'])


def load_prompt(preset):
    """
    Read the text of a prompt-engineering preset shipped with the package
    :param preset: One of PROMPT_PRESETS
    :return: Prompt text, empty for 'none'
    """
    if preset not in PROMPT_PRESETS:
        raise ConfigError(f'unknown prompt preset {preset!r}, expected one of {", ".join(PROMPT_PRESETS)}')
    if preset == 'none':
        return ''
    with open(os.path.join(DATA_DIR, 'prompts', f'{preset}.txt'), 'r') as prompt_file:
        return prompt_file.read().strip()


def prompt_tokens(vocab, preset):
    """ Beginning-of-sequence token followed by the encoded preset """
    return vocab.encode(load_prompt(preset), add_bos=True)
