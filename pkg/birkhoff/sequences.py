"""Symbolic sequence generators and observable streams.

Block-constructed sequences alternate symbols across blocks whose lengths
follow a geometric, cumulative or explicit rule. Nothing here materializes a
whole block: generators walk block lengths lazily and emit fixed-size numpy
chunks, so a stream over 2^24 or 10^7 terms costs one chunk of memory.

Built-in sequences:

    example1  -- 0, 1 1, 0 0 0 0, ...   block i has length 2^i
    example2  -- 0, 1 1, 0 x 9, 1 x 48   block i is i times all previous blocks
    example3  -- f(sigma^m j) along j = (1, -1, -1, 1, 1, 1, ...)
"""
import json
import logging
import math
from dataclasses import dataclass, field
from itertools import count
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from birkhoff.errors import ArithmeticOverflowError, InvalidInputError, UnmappedSymbolError

logger = logging.getLogger(__name__)

# Checked 128-bit signed range for block-length arithmetic
MAX_BLOCK_LENGTH = 2 ** 127 - 1

DEFAULT_CHUNK_SIZE = 8192

LENGTH_RULES = ('geometric', 'cumulative', 'explicit')

BUILTIN_SPECS: Dict[str, Dict[str, Any]] = {
    'example1': {
        'rule': 'geometric',
        'base': 2,
        'symbols': [0, 1],
        'observable': {'0': 0.0, '1': 1.0},
    },
    'example2': {
        'rule': 'cumulative',
        'symbols': [0, 1],
        'observable': {'0': 0.0, '1': 1.0},
    },
}


@dataclass(frozen=True)
class BlockSpec:
    """Infinite block construction: block i repeats symbols[i % len(symbols)]"""

    rule: str
    symbols: Tuple[int, ...]
    initial_block_length: int = 1
    base: Optional[int] = None
    lengths: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.rule not in LENGTH_RULES:
            raise InvalidInputError(f"Unknown length rule '{self.rule}', expected one of {LENGTH_RULES}")
        if not self.symbols:
            raise InvalidInputError("Block spec needs at least one symbol")
        if self.initial_block_length < 1:
            raise InvalidInputError("initial_block_length must be a positive integer")
        if self.rule == 'geometric' and (self.base is None or self.base < 2):
            raise InvalidInputError("Geometric rule needs an integer base >= 2")
        if self.rule == 'explicit':
            if not self.lengths:
                raise InvalidInputError("Explicit rule needs a non-empty list of lengths")
            if any(length < 1 for length in self.lengths):
                raise InvalidInputError("Explicit block lengths must be positive integers")

    def symbol_for_block(self, index: int) -> int:
        """Symbol carried by the block with 0-based index `index`"""
        return self.symbols[index % len(self.symbols)]


def block_lengths(spec: BlockSpec) -> Iterator[int]:
    """
    Lazily yield the block lengths of a spec, first block first.

    geometric:  l_i = base^i * l_0 for i = 0, 1, ...
    cumulative: l_1 = l_0, l_i = i * (l_1 + ... + l_{i-1}) for i >= 2
    explicit:   the listed lengths, repeated cyclically

    Raises:
        ArithmeticOverflowError: when a length leaves the 128-bit range
    """
    if spec.rule == 'explicit':
        while True:
            for length in spec.lengths:
                yield length

    if spec.rule == 'geometric':
        length = spec.initial_block_length
        while True:
            _check_length(length)
            yield length
            length *= spec.base

    # cumulative
    total = 0
    for i in count(1):
        length = spec.initial_block_length if i == 1 else i * total
        _check_length(length)
        yield length
        total += length


def _check_length(length: int) -> None:
    if length > MAX_BLOCK_LENGTH:
        raise ArithmeticOverflowError(f"Block length {length} exceeds the 128-bit limit")


def iter_block_chunks(
    blocks: Iterable[Tuple[int, float]],
    n: int,
    offset: int = 0,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    dtype: Any = np.int64,
) -> Iterator[np.ndarray]:
    """
    Expand (length, value) blocks into fixed-size chunks.

    Args:
        blocks: iterable of (block length, value); may be infinite
        n: number of terms to emit
        offset: number of leading terms to skip
        chunk_size: size of every chunk but possibly the last
        dtype: numpy dtype of the emitted chunks

    Returns:
        Iterator of arrays whose concatenation holds terms offset .. offset+n-1
    """
    remaining = n
    cursor = offset
    block_start = 0
    pending: List[np.ndarray] = []
    pending_len = 0

    for length, value in blocks:
        if remaining <= 0:
            break
        block_end = block_start + length
        while cursor < block_end and remaining > 0:
            take = min(block_end - cursor, remaining, chunk_size - pending_len)
            pending.append(np.full(take, value, dtype=dtype))
            pending_len += take
            cursor += take
            remaining -= take
            if pending_len == chunk_size:
                yield np.concatenate(pending)
                pending = []
                pending_len = 0
        block_start = block_end

    if pending:
        yield np.concatenate(pending)


def iter_symbol_chunks(
    spec: BlockSpec,
    n: int,
    offset: int = 0,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> Iterator[np.ndarray]:
    """Symbol chunks of the block construction, starting at `offset`"""
    blocks = ((length, spec.symbol_for_block(i)) for i, length in enumerate(block_lengths(spec)))
    return iter_block_chunks(blocks, n, offset=offset, chunk_size=chunk_size)


def generate(spec: BlockSpec, n: int, offset: int = 0) -> np.ndarray:
    """
    Generate symbols offset .. offset+n-1 of the infinite block construction.

    Args:
        spec: block construction
        n: number of symbols, at least 1
        offset: 0-based position of the first symbol returned

    Returns:
        int64 array of length n
    """
    if n < 1:
        raise InvalidInputError(f"Number of symbols must be >= 1, got {n}")
    if offset < 0:
        raise InvalidInputError(f"Offset must be >= 0, got {offset}")
    return np.concatenate(list(iter_symbol_chunks(spec, n, offset=offset)))


@dataclass(frozen=True)
class ObservableMap:
    """Observable restricted to symbols: symbol -> real value"""

    table: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.table:
            raise InvalidInputError("Observable table is empty")
        for symbol, value in self.table.items():
            if not math.isfinite(value):
                raise InvalidInputError(f"Observable value for symbol {symbol} is not finite")

    @property
    def bound(self) -> float:
        """M = max |value|"""
        return max(abs(value) for value in self.table.values())

    def value(self, symbol: int) -> float:
        try:
            return self.table[symbol]
        except KeyError:
            raise UnmappedSymbolError(symbol) from None

    def map_array(self, symbols: np.ndarray) -> np.ndarray:
        """Vectorized lookup; raises UnmappedSymbolError naming the first missing symbol"""
        keys = np.array(sorted(self.table), dtype=np.int64)
        values = np.array([self.table[k] for k in keys.tolist()], dtype=np.float64)
        symbols = np.asarray(symbols, dtype=np.int64)
        positions = np.searchsorted(keys, symbols)
        positions = np.clip(positions, 0, len(keys) - 1)
        missing = keys[positions] != symbols
        if missing.any():
            raise UnmappedSymbolError(int(symbols[np.argmax(missing)]))
        return values[positions]


class ObservableStream:
    """
    Lazily generated real sequence phi(x_0), phi(x_1), ... with a declared bound.

    The stream is a specification, not a cursor: every call to `chunks` starts
    an independent pass from the first term.
    """

    def __init__(
        self,
        chunk_source: Callable[[int, int], Iterator[np.ndarray]],
        length: Optional[int] = None,
        bound: Optional[float] = None,
        name: str = 'stream',
    ):
        self._chunk_source = chunk_source
        self.length = length
        self.bound = bound
        self.name = name

    @classmethod
    def from_array(cls, values: Iterable[float], bound: Optional[float] = None, name: str = 'array') -> 'ObservableStream':
        data = np.asarray(values, dtype=np.float64)

        def source(n: int, chunk_size: int) -> Iterator[np.ndarray]:
            for start in range(0, n, chunk_size):
                yield data[start:min(n, start + chunk_size)]

        return cls(source, length=len(data), bound=bound, name=name)

    def resolve_length(self, limit: Optional[int]) -> int:
        """Number of terms a pass limited to `limit` will produce"""
        if self.length is None:
            if limit is None:
                raise InvalidInputError(f"Stream '{self.name}' is infinite; a term limit is required")
            return limit
        return self.length if limit is None else min(limit, self.length)

    def chunks(self, limit: Optional[int] = None, chunk_size: int = DEFAULT_CHUNK_SIZE) -> Iterator[np.ndarray]:
        n = self.resolve_length(limit)
        if n <= 0:
            return iter(())
        return self._chunk_source(n, chunk_size)

    def take(self, n: int) -> np.ndarray:
        parts = list(self.chunks(n))
        if not parts:
            return np.empty(0, dtype=np.float64)
        return np.concatenate(parts).astype(np.float64, copy=False)

    def __iter__(self) -> Iterator[float]:
        for chunk in self.chunks():
            yield from chunk.tolist()

    def __len__(self) -> int:
        if self.length is None:
            raise TypeError(f"Stream '{self.name}' is infinite")
        return self.length


def observe(seq: Iterable[int], obs_map: ObservableMap) -> ObservableStream:
    """
    Map a finite symbol sequence to its observable stream.

    Raises:
        UnmappedSymbolError: when a symbol has no table entry
    """
    values = obs_map.map_array(np.asarray(list(seq) if not isinstance(seq, np.ndarray) else seq))
    return ObservableStream.from_array(values, bound=obs_map.bound, name='observed')


def spec_stream(spec: BlockSpec, obs_map: ObservableMap, name: str = 'blocks') -> ObservableStream:
    """Infinite observable stream of a block construction"""
    for symbol in spec.symbols:
        obs_map.value(symbol)
    values = {symbol: obs_map.value(symbol) for symbol in spec.symbols}

    def source(n: int, chunk_size: int) -> Iterator[np.ndarray]:
        blocks = ((length, values[spec.symbol_for_block(i)]) for i, length in enumerate(block_lengths(spec)))
        return iter_block_chunks(blocks, n, chunk_size=chunk_size, dtype=np.float64)

    return ObservableStream(source, length=None, bound=obs_map.bound, name=name)


# Signed run sequence j = (1, -1, -1, 1, 1, 1, -1, ...): run i has i copies of (-1)^(i+1)

def run_start(i: int) -> int:
    """1-based position where run i starts"""
    return 1 + i * (i - 1) // 2


def run_index(position: int) -> int:
    """Run containing the 1-based position: smallest i with i(i+1)/2 >= position"""
    i = (math.isqrt(8 * position + 1) - 1) // 2
    if i * (i + 1) // 2 < position:
        i += 1
    return i


def example3_f(position: int) -> int:
    """
    f(sigma^(position-1) j) = (remaining run length) * (sign at position).

    Args:
        position: 1-based index into j

    Returns:
        Signed remaining run length; finite for every position
    """
    if position < 1:
        raise InvalidInputError(f"Position must be >= 1, got {position}")
    i = run_index(position)
    remaining = i * (i + 1) // 2 - position + 1
    sign = 1 if i % 2 == 1 else -1
    return sign * remaining


def _run_indices(positions: np.ndarray) -> np.ndarray:
    runs = np.ceil((np.sqrt(8.0 * positions + 1.0) - 1.0) / 2.0).astype(np.int64)
    runs = np.where(runs * (runs + 1) // 2 < positions, runs + 1, runs)
    runs = np.where((runs - 1) * runs // 2 >= positions, runs - 1, runs)
    return runs


def signed_run_symbols(n: int, offset: int = 0) -> np.ndarray:
    """Symbols j_{offset+1} .. j_{offset+n} of the signed run sequence"""
    positions = np.arange(offset + 1, offset + n + 1, dtype=np.int64)
    runs = _run_indices(positions)
    return np.where(runs % 2 == 1, 1, -1).astype(np.int64)


def example3_values(n: int, offset: int = 0) -> np.ndarray:
    """Vectorized example3_f over positions offset+1 .. offset+n"""
    positions = np.arange(offset + 1, offset + n + 1, dtype=np.int64)
    runs = _run_indices(positions)
    remaining = runs * (runs + 1) // 2 - positions + 1
    return np.where(runs % 2 == 1, remaining, -remaining).astype(np.float64)


def example3_stream() -> ObservableStream:
    """Unbounded observable stream of f along j (no declared bound)"""

    def source(n: int, chunk_size: int) -> Iterator[np.ndarray]:
        for start in range(0, n, chunk_size):
            yield example3_values(min(chunk_size, n - start), offset=start)

    return ObservableStream(source, length=None, bound=None, name='example3')


# JSON documents: {"rule", "base"?, "lengths"?, "initial_block_length"?, "symbols", "observable"}

SPEC_KEYS = {'rule', 'base', 'lengths', 'initial_block_length', 'symbols', 'observable'}


def spec_from_dict(doc: Dict[str, Any]) -> Tuple[BlockSpec, ObservableMap]:
    """Build a (BlockSpec, ObservableMap) pair from a parsed JSON document"""
    if not isinstance(doc, dict):
        raise InvalidInputError("Sequence spec must be a JSON object")
    unknown = set(doc) - SPEC_KEYS
    if unknown:
        raise InvalidInputError(f"Unknown keys in sequence spec: {sorted(unknown)}")
    for key in ('rule', 'symbols', 'observable'):
        if key not in doc:
            raise InvalidInputError(f"Missing '{key}' in sequence spec")

    try:
        spec = BlockSpec(
            rule=doc['rule'],
            symbols=tuple(int(s) for s in doc['symbols']),
            initial_block_length=int(doc.get('initial_block_length', 1)),
            base=int(doc['base']) if doc.get('base') is not None else None,
            lengths=tuple(int(v) for v in doc['lengths']) if doc.get('lengths') is not None else None,
        )
        table = {int(symbol): float(value) for symbol, value in doc['observable'].items()}
    except (TypeError, ValueError, AttributeError) as e:
        if isinstance(e, InvalidInputError):
            raise
        raise InvalidInputError(f"Malformed sequence spec: {str(e)}") from e

    obs_map = ObservableMap(table)
    for symbol in spec.symbols:
        obs_map.value(symbol)
    return spec, obs_map


def spec_to_dict(spec: BlockSpec, obs_map: ObservableMap) -> Dict[str, Any]:
    """Inverse of spec_from_dict"""
    doc: Dict[str, Any] = {'rule': spec.rule}
    if spec.base is not None:
        doc['base'] = spec.base
    if spec.lengths is not None:
        doc['lengths'] = list(spec.lengths)
    if spec.initial_block_length != 1:
        doc['initial_block_length'] = spec.initial_block_length
    doc['symbols'] = list(spec.symbols)
    doc['observable'] = {str(symbol): value for symbol, value in obs_map.table.items()}
    return doc


def parse_spec_json(text: str) -> Tuple[BlockSpec, ObservableMap]:
    """
    Parse a JSON sequence spec.

    Raises:
        InvalidInputError: malformed JSON (with line/column) or invalid content
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidInputError(
            f"Malformed JSON at line {e.lineno}, column {e.colno} (char {e.pos}): {e.msg}"
        ) from e
    return spec_from_dict(doc)


def builtin_spec(name: str) -> Tuple[BlockSpec, ObservableMap]:
    if name not in BUILTIN_SPECS:
        raise InvalidInputError(f"Unknown built-in sequence '{name}'")
    return spec_from_dict(BUILTIN_SPECS[name])
