"""
Call signature tables: the mapping between call signatures and grammar terminals.

* `MAX_ENTRIES`: Largest number of entries a table may hold.
* `SignatureTable`: Thread-safe interning table with per-entry call counts.
* `merge_tables`: Merges per-rank tables into one, returning per-rank remaps.
"""
import struct
import threading

from iogrammar.model import CallSignature
from iogrammar.exceptions import TableFull, InvalidRecord

__all__ = [
	'MAX_ENTRIES',
	'SignatureTable',
	'merge_tables'
]

MAX_ENTRIES = 2**32 - 1
""" Terminal indices run from 0 to 2^32-2."""

_U32 = struct.Struct('<I')
_U64 = struct.Struct('<Q')

class SignatureTable:
	"""
	Bijection between call signatures and dense terminal indices, in first-insertion order,
	with a call count per entry.

	`intern` is serialized by an internal lock so several application threads of one
	process can share a table.

	Methods:
		- `intern`(sig): Returns the index of a signature, adding it if new.
		- `lookup`(index): Returns the signature of an index.
		- `index_of`(sig): Returns the index of a known signature, or None.
		- `count`(index): Returns how many calls mapped to an index.
		- `to_bytes`() / `from_bytes`(data): Serialization for the archive.
	"""
	def __init__(self):
		self._lock    = threading.Lock()
		self._indices = {}
		self._sigs    = []
		self._counts  = []

	def __len__(self) -> int:
		return len(self._sigs)

	def __iter__(self):
		return iter(list(self._sigs))

	def __contains__(self, sig) -> bool:
		return sig in self._indices

	def __eq__(self, other):
		return isinstance(other, SignatureTable) and self._sigs == other._sigs and self._counts == other._counts

	def __repr__(self):
		return 'SignatureTable(%d entries, %d calls)' % (len(self._sigs), sum(self._counts))

	def intern(self, sig, count=1) -> int:
		"""
		Interns a signature.

		Args:
		- **sig (CallSignature)**: The signature.
		- **count (int, optional)**: Calls to add to the entry. Defaults to 1.

		Returns:
		- **int**: The existing index, or the next dense index for a new signature.

		Raises:
		- **TableFull**: If the table already holds `MAX_ENTRIES` entries.
		"""
		with self._lock:
			index = self._indices.get(sig)
			if index is not None:
				self._counts[index] += count
				return index

			index = len(self._sigs)
			if index >= MAX_ENTRIES:
				raise TableFull("Signature table is full at %d entries" % index)

			self._indices[sig] = index
			self._sigs.append(sig)
			self._counts.append(count)

			return index

	def index_of(self, sig):
		return self._indices.get(sig)

	def lookup(self, index) -> CallSignature:
		return self._sigs[index]

	def count(self, index) -> int:
		return self._counts[index]

	def counts(self) -> list:
		return list(self._counts)

	def items(self):
		"""
		Yields `(index, signature, count)` in index order.
		"""
		for index, (sig, count) in enumerate(zip(self._sigs, self._counts)):
			yield index, sig, count

	def copy(self):
		table = SignatureTable()
		for _, sig, count in self.items():
			table.intern(sig, count)
		return table

	def total_calls(self) -> int:
		return sum(self._counts)

	def to_bytes(self) -> bytes:
		"""
		Entry count u32, then per entry: signature length u32, signature bytes, call count u64.
		"""
		out = bytearray(_U32.pack(len(self._sigs)))
		for sig, count in zip(self._sigs, self._counts):
			out += _U32.pack(len(sig.data))
			out += sig.data
			out += _U64.pack(count)

		return bytes(out)

	@classmethod
	def from_bytes(cls, data, offset=0):
		"""
		Parses a serialized table.

		Returns:
		- **tuple**: `(SignatureTable, end offset)`.

		Raises:
		- **InvalidRecord**: On truncation, duplicate signatures or zero counts. The message carries the byte offset.
		"""
		def unpack(st, pos):
			if pos + st.size > len(data):
				raise InvalidRecord("Signature table truncated at byte %d" % pos)
			return st.unpack_from(data, pos)[0], pos + st.size

		table = cls()
		count, pos = unpack(_U32, offset)
		for _ in range(count):
			start = pos
			size, pos = unpack(_U32, pos)
			if pos + size > len(data):
				raise InvalidRecord("Signature table truncated at byte %d" % pos)
			sig = CallSignature(bytes(data[pos:pos + size]))
			pos += size
			calls, pos = unpack(_U64, pos)
			if calls == 0 or sig in table:
				raise InvalidRecord("Invalid signature table entry at byte %d" % start)
			table.intern(sig, calls)

		return table, pos

def merge_tables(tables):
	"""
	Merges per-rank signature tables.

	Entries are added scanning ranks 0..P-1, each in its own index order, so the merged
	index order is deterministic. Call counts are summed.

	Args:
	- **tables (list of SignatureTable)**: One table per rank, non-empty list.

	Returns:
	- **tuple**: `(merged SignatureTable, list of remaps)` where `remaps[r][i]` is the merged
		index of rank r's index i.
	"""
	if len(tables) == 0:
		raise ValueError("Expected at least one signature table")

	merged = SignatureTable()
	remaps = []
	for table in tables:
		remaps.append([merged.intern(sig, count) for _, sig, count in table.items()])

	return merged, remaps

#EOF
