"""
Inter-process finalization.

`finalize_trace` turns the per-rank session results into what the archive stores:

1. rank-linear rewrite of offset coefficients in every rank's table;
2. merge of the rewritten tables into one signature table;
3. remap of every rank grammar onto the merged terminals;
4. deduplication of the remapped grammars, with a per-rank index into the unique ones;
5. packing of each rank's timestamps.

Timestamps are packed as little-endian u32 `(entry, exit)` pairs, then compressed with raw
deflate.

* `CODEC`: Name of the timestamp codec, stored in the archive metadata.
* `MergeResult`: Output of `finalize_trace`.
* `finalize_trace`: Runs the pipeline.
* `raw_timestamp_block` / `pack_timestamps` / `unpack_timestamps`: Timestamp blocks.
"""
import zlib
import logging

import numpy as np

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Tuple

from iogrammar.cst import SignatureTable, merge_tables
from iogrammar.grammar import Grammar, remap_terminals
from iogrammar.pattern import finalize_patterns
from iogrammar.exceptions import InvalidRecord

logger = logging.getLogger(__name__)

__all__ = [
	'CODEC',
	'MergeResult',
	'finalize_trace',
	'raw_timestamp_block',
	'pack_timestamps',
	'unpack_timestamps'
]

CODEC = 'deflate-raw'
""" Timestamp codec id (RFC 1951 deflate, no zlib header)."""

_WBITS = -15
_LEVEL = 9

@dataclass
class MergeResult:
	"""
	Attributes:
		- `table`(SignatureTable): The merged signature table.
		- `grammars`(list of Grammar): Unique grammars, in order of first use by rank.
		- `index`(list of int): For each rank, the position of its grammar in `grammars`.
		- `timestamps`(list of bytes): For each rank, its packed timestamp block.
		- `counts`(list of int): For each rank, the number of recorded calls.
	"""
	table: SignatureTable
	grammars: List[Grammar]
	index: List[int]
	timestamps: List[bytes]
	counts: List[int] = field(default_factory=list)

	@property
	def nranks(self) -> int:
		return len(self.index)

	def __eq__(self, other):
		return (
			isinstance(other, MergeResult)
			and self.table == other.table
			and [g.to_bytes() for g in self.grammars] == [g.to_bytes() for g in other.grammars]
			and self.index == other.index
			and [unpack_timestamps(b) for b in self.timestamps] == [unpack_timestamps(b) for b in other.timestamps]
			and self.counts == other.counts
		)

	def grammar_of(self, rank) -> Grammar:
		return self.grammars[self.index[rank]]

#------------------------------------------------------------------------------
# Timestamps
#------------------------------------------------------------------------------

def raw_timestamp_block(log) -> bytes:
	"""
	Lays out a timestamp log as little-endian u32 pairs, 8 bytes per call.

	Args:
	- **log (sequence of (int, int))**: `(t_entry, t_exit)` tick pairs.

	Returns:
	- **bytes**: The uncompressed block.
	"""
	if len(log) == 0:
		return b''

	arr = np.asarray(log, dtype=np.int64).reshape(-1, 2)
	if arr.min() < 0 or arr.max() > 0xFFFFFFFF:
		raise InvalidRecord("Timestamps must fit in 32 bits")

	return arr.astype('<u4').tobytes()

def pack_timestamps(log) -> bytes:
	"""
	Packs a timestamp log: raw u32 pairs compressed with raw deflate.
	"""
	compressor = zlib.compressobj(_LEVEL, zlib.DEFLATED, _WBITS)
	return compressor.compress(raw_timestamp_block(log)) + compressor.flush()

def unpack_timestamps(data) -> list:
	"""
	Inverse of `pack_timestamps`.

	Returns:
	- **list of (int, int)**: The timestamp log.

	Raises:
	- **InvalidRecord**: If the block does not inflate to a whole number of pairs.
	"""
	try:
		decompressor = zlib.decompressobj(_WBITS)
		raw = decompressor.decompress(data) + decompressor.flush()
	except zlib.error as e:
		raise InvalidRecord("Timestamp block does not inflate: %s" % e) from None
	if not decompressor.eof or decompressor.unused_data:
		raise InvalidRecord("Timestamp block is truncated or followed by garbage")
	if len(raw) % 8 != 0:
		raise InvalidRecord("Timestamp block of %d bytes is not made of u32 pairs" % len(raw))

	pairs = np.frombuffer(raw, dtype='<u4').reshape(-1, 2)
	return [(int(a), int(b)) for a, b in pairs]

#------------------------------------------------------------------------------
# Pipeline
#------------------------------------------------------------------------------

def finalize_trace(rank_locals, inter_pattern=True, max_workers=None) -> MergeResult:
	"""
	Runs the inter-process finalization over all ranks.

	Args:
	- **rank_locals (list of RankLocal)**: One per rank, ordered by rank from 0.
	- **inter_pattern (bool, optional)**: Rewrite offsets into rank-linear form before merging. Defaults to True.
	- **max_workers (int, optional)**: Threads used for the per-rank remap and packing steps.

	Returns:
	- **MergeResult**: Merged table, unique grammars, index and packed timestamps.
	"""
	if len(rank_locals) == 0:
		raise ValueError("Expected at least one rank")
	for expected, local in enumerate(rank_locals):
		if local.rank != expected:
			raise ValueError("Expected rank %d but got %d" % (expected, local.rank))

	counts = [local.calls for local in rank_locals]
	if len(set(counts)) > 1:
		logger.warning("Ranks recorded different call counts (min %d, max %d)", min(counts), max(counts))

	tables = [local.table for local in rank_locals]
	if inter_pattern:
		tables = finalize_patterns(tables)

	merged, remaps = merge_tables(tables)
	logger.debug("Merged %d tables into %d signatures", len(tables), len(merged))

	def remap(rank):
		return remap_terminals(rank_locals[rank].grammar, remaps[rank])

	with ThreadPoolExecutor(max_workers=max_workers) as pool:
		remapped = list(pool.map(remap, range(len(rank_locals))))
		packed   = list(pool.map(lambda local: pack_timestamps(local.timestamps), rank_locals))

	grammars = []
	index    = []
	seen     = {}
	for grammar in remapped:
		key = grammar.to_bytes()
		if key not in seen:
			seen[key] = len(grammars)
			grammars.append(grammar)
		index.append(seen[key])

	logger.debug("%d ranks share %d unique grammars", len(index), len(grammars))

	return MergeResult(table=merged, grammars=grammars, index=index, timestamps=packed, counts=counts)

#EOF
