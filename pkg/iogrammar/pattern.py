"""
Offset pattern recognition and group-wide handle ids.

Within a process, successive calls sharing a pattern key (their signature with every offset
masked) often access offsets `i*a + b`, `i` being the number of earlier calls with that key.
Storing `(a, b)` instead of the offset makes all those calls share one signature. Across
processes, the same coefficient frequently reads `rank*c + d`; rewriting it that way makes
the per-rank signatures identical so they merge into one table entry.

**Intra-process**
* `masked_key`: Pattern key of a call.
* `PatternStore`: Per-rank encoder of offsets into `Literal`/`IterLinear` patterns.
* `decode_offset`: Turns a pattern back into an offset.
* `OffsetDecoder`: Recomputes the per-key call index while walking a rank's stream.

**Inter-process**
* `recognize_rank_linear`: Fits `rank*c + d` to a per-rank value list.
* `finalize_patterns`: Rewrites per-rank tables with rank-linear coefficients.

**Handles**
* `HandleRegistry`: Issues group-wide ids to collectively opened handles.
"""
import logging
import threading

from collections import defaultdict

from iogrammar.model import (
	I64_MIN, I64_MAX, Int, Offset, Masked, Literal, IterLinear, RankLinear, CallSignature,
	encode_fields, decode_signature
)
from iogrammar.cst import SignatureTable
from iogrammar.exceptions import DoubleOpen, InvalidRecord

logger = logging.getLogger(__name__)

__all__ = [
	'masked_key',
	'PatternStore',
	'decode_offset',
	'OffsetDecoder',
	'recognize_rank_linear',
	'finalize_patterns',
	'HandleRegistry'
]

def _fits(*values) -> bool:
	return all(I64_MIN <= v <= I64_MAX for v in values)

#------------------------------------------------------------------------------
# Pattern keys
#------------------------------------------------------------------------------

def masked_key(func, args, thread_id, call_depth, offset_slots=None) -> bytes:
	"""
	Returns the pattern key of a call: its canonical signature bytes with every offset slot masked.

	Args:
	- **func (int)**: Function id.
	- **args (sequence of ArgValue)**: Arguments.
	- **thread_id (int)**: Thread id.
	- **call_depth (int)**: Call depth.
	- **offset_slots (iterable of int, optional)**: Slots to mask. Defaults to the slots holding an `Offset`.

	Returns:
	- **bytes**: The key.
	"""
	if offset_slots is None:
		slots = {i for i, arg in enumerate(args) if isinstance(arg, Offset)}
	else:
		slots = set(offset_slots)

	masked = tuple(Masked() if i in slots else arg for i, arg in enumerate(args))

	return encode_fields(func, masked, thread_id, call_depth)

def _shape_key(func, args, thread_id, call_depth) -> bytes:
	"""
	Like `masked_key` but keeps apart Literal and IterLinear offsets.
	"""
	shaped = tuple(
		Masked(0 if isinstance(arg.pattern, Literal) else 1) if isinstance(arg, Offset) else arg
		for arg in args
	)
	return encode_fields(func, shaped, thread_id, call_depth)

#------------------------------------------------------------------------------
# Intra-process patterns
#------------------------------------------------------------------------------

class _SlotState:
	__slots__ = ('anchor', 'value', 'a', 'b')

	def __init__(self, anchor, value):
		self.anchor = anchor
		self.value  = value
		self.a      = None
		self.b      = None

class PatternStore:
	"""
	Per-rank intra-process offset encoder.

	For every pattern key the store counts the calls seen so far; that count is the index `i`
	of the next call. The first call of a run is stored as `Literal`; the second call fixes
	the stride `a`, after which every call matching `i*a + b` is stored as `IterLinear(a, b)`.
	A call off the line starts a new run at its own index. The index itself is never reset,
	so a decoder only needs to count earlier calls with the same key.

	A zero stride never produces `IterLinear`: a constant offset stays a `Literal`.
	"""
	def __init__(self):
		self._lock   = threading.Lock()
		self._counts = defaultdict(int)
		self._slots  = {}

	def __len__(self) -> int:
		return len(self._counts)

	def count(self, key) -> int:
		return self._counts.get(key, 0)

	def encode_offset(self, key, offset):
		"""
		Encodes one offset of a single-offset function.

		Args:
		- **key (bytes)**: Pattern key, see `masked_key`.
		- **offset (int)**: The offset.

		Returns:
		- **Literal or IterLinear**: The encoded offset.
		"""
		return self.encode_offsets(key, [offset])[0]

	def encode_offsets(self, key, offsets) -> list:
		"""
		Encodes the offsets of one call, one per offset slot in slot order, and advances the
		call index of `key` once.
		"""
		with self._lock:
			i = self._counts[key]
			self._counts[key] = i + 1
			return [self._encode(key, slot, i, offset) for slot, offset in enumerate(offsets)]

	def _encode(self, key, slot, i, offset):
		state = self._slots.get((key, slot))
		if state is None:
			self._slots[(key, slot)] = _SlotState(i, offset)
			return Literal(offset)

		if state.a is None:
			a = offset - state.value
			b = state.value - state.anchor * a
			if not _fits(a, b):
				self._slots[(key, slot)] = _SlotState(i, offset)
				return Literal(offset)
			state.a = a
			state.b = b
			return Literal(offset) if a == 0 else IterLinear(a, b)

		if offset == i * state.a + state.b:
			return Literal(offset) if state.a == 0 else IterLinear(state.a, state.b)

		self._slots[(key, slot)] = _SlotState(i, offset)
		return Literal(offset)

def _resolve(coef, rank) -> int:
	return coef.resolve(rank) if isinstance(coef, RankLinear) else coef

def decode_offset(pattern, index, rank=0) -> int:
	"""
	Decodes an offset pattern.

	Args:
	- **pattern (Literal or IterLinear)**: The pattern.
	- **index (int)**: Number of earlier calls of the same rank sharing the pattern key.
	- **rank (int, optional)**: Rank of the caller, used by rank-linear coefficients. Defaults to 0.

	Returns:
	- **int**: The offset.
	"""
	if isinstance(pattern, Literal):
		return _resolve(pattern.v, rank)
	if isinstance(pattern, IterLinear):
		return index * _resolve(pattern.a, rank) + _resolve(pattern.b, rank)

	raise InvalidRecord("Expected an offset pattern but got %r" % (pattern,))

class OffsetDecoder:
	"""
	Decodes the offsets of one rank's records in stream order.

	Methods:
		- `decode`(func, args, thread_id, call_depth): Returns the arguments with every `Offset` replaced by `Int`.
	"""
	def __init__(self, rank):
		self.rank    = rank
		self._counts = defaultdict(int)

	def decode(self, func, args, thread_id, call_depth) -> tuple:
		if not any(isinstance(arg, Offset) for arg in args):
			return tuple(args)

		key = masked_key(func, args, thread_id, call_depth)
		i = self._counts[key]
		self._counts[key] = i + 1

		return tuple(
			Int(decode_offset(arg.pattern, i, self.rank)) if isinstance(arg, Offset) else arg
			for arg in args
		)

#------------------------------------------------------------------------------
# Inter-process patterns
#------------------------------------------------------------------------------

def recognize_rank_linear(values):
	"""
	Fits `values[r] = r*c + d` exactly.

	Args:
	- **values (sequence of int)**: One value per rank, rank 0 first.

	Returns:
	- **tuple or None**: `(c, d)` with `c != 0`, or None for fewer than 2 ranks, constant
		values or values that are not linear in the rank.
	"""
	if len(values) < 2:
		return None

	d = values[0]
	c = values[1] - d
	if c == 0 or not _fits(c, d):
		return None
	for r, v in enumerate(values):
		if v != r * c + d:
			return None

	return c, d

def _coefficients(pattern):
	if isinstance(pattern, Literal):
		return [pattern.v]
	return [pattern.a, pattern.b]

def _rebuild(pattern, coefs):
	if isinstance(pattern, Literal):
		return Literal(coefs[0])
	return IterLinear(coefs[0], coefs[1])

def finalize_patterns(tables):
	"""
	Rewrites rank-varying offset coefficients into rank-linear form.

	Entries are grouped by pattern key, Literal and IterLinear kept apart. A group is rewritten
	only when every rank contributes exactly one entry to it. Each coefficient (a Literal value,
	or IterLinear `a` and `b` independently) that fits `rank*c + d` across ranks is replaced by
	`RankLinear(c, d)`. Entry order and counts are kept, so terminal indices stay valid.

	Args:
	- **tables (list of SignatureTable)**: One table per rank, rank 0 first.

	Returns:
	- **list of SignatureTable**: The rewritten tables. Inputs are not modified.
	"""
	nranks = len(tables)
	if nranks < 2:
		return [table.copy() for table in tables]

	# shape key -> rank -> [(index, fields)]
	groups = defaultdict(lambda: defaultdict(list))
	for rank, table in enumerate(tables):
		for index, sig, _ in table.items():
			func, args, tid, depth = decode_signature(sig.data)
			if any(isinstance(arg, Offset) for arg in args):
				groups[_shape_key(func, args, tid, depth)][rank].append((index, (func, args, tid, depth)))

	replaced = [dict() for _ in range(nranks)]
	rewritten = 0
	for members in groups.values():
		if len(members) != nranks or any(len(entries) != 1 for entries in members.values()):
			continue

		entries = [members[r][0] for r in range(nranks)]
		arg_lists = [list(fields[1]) for _, fields in entries]
		changed = False

		for slot, arg in enumerate(entries[0][1][1]):
			if not isinstance(arg, Offset):
				continue
			per_rank = [_coefficients(args[slot].pattern) for args in arg_lists]
			for pos in range(len(per_rank[0])):
				values = [coefs[pos] for coefs in per_rank]
				if any(isinstance(v, RankLinear) for v in values):
					continue
				fit = recognize_rank_linear(values)
				if fit is None:
					continue
				for coefs in per_rank:
					coefs[pos] = RankLinear(*fit)
				changed = True
			for r in range(nranks):
				arg_lists[r][slot] = Offset(_rebuild(arg_lists[r][slot].pattern, per_rank[r]))

		if not changed:
			continue
		rewritten += 1
		for r, (index, (func, _, tid, depth)) in enumerate(entries):
			replaced[r][index] = CallSignature(encode_fields(func, tuple(arg_lists[r]), tid, depth))

	logger.debug("Offset pattern groups: %d, rewritten with rank-linear coefficients: %d", len(groups), rewritten)

	result = []
	for rank, table in enumerate(tables):
		out = SignatureTable()
		for index, sig, count in table.items():
			out.intern(replaced[rank].get(index, sig), count)
		result.append(out)

	return result

#------------------------------------------------------------------------------
# Group-wide handles
#------------------------------------------------------------------------------

class HandleRegistry:
	"""
	Maps each rank's local handles to group-wide ids issued sequentially from 0.

	One registry stands in for the group coordinator of a whole trace session; it is shared
	by every rank tracer and internally synchronized.

	Methods:
		- `collective_open`(group, handles): Issues one id for a collective open.
		- `lookup`(rank, handle): Returns the id of a local handle, or None.
		- `release`(rank, handle): Forgets a local handle after it was closed.
	"""
	def __init__(self):
		self._lock   = threading.Lock()
		self._next   = 0
		self._by_rank = defaultdict(dict)

	def __len__(self) -> int:
		return self._next

	def collective_open(self, group, handles) -> int:
		"""
		Registers a collective open.

		Args:
		- **group (sequence of int)**: Participating ranks.
		- **handles (sequence of int)**: Local handle of each participating rank, aligned with `group`.

		Returns:
		- **int**: The new group-wide id.

		Raises:
		- **DoubleOpen**: If a rank's local handle is already mapped.
		- **ValueError**: If `group` and `handles` differ in length or the group is empty.
		"""
		group   = list(group)
		handles = list(handles)
		if len(group) == 0 or len(group) != len(handles):
			raise ValueError("Expected one handle per rank but got %d ranks and %d handles" % (len(group), len(handles)))

		with self._lock:
			for rank, handle in zip(group, handles):
				if handle in self._by_rank[rank]:
					raise DoubleOpen("Rank %d handle %d is already mapped to id %d" % (rank, handle, self._by_rank[rank][handle]))

			uid = self._next
			self._next += 1
			for rank, handle in zip(group, handles):
				self._by_rank[rank][handle] = uid

		return uid

	def lookup(self, rank, handle):
		with self._lock:
			return self._by_rank[rank].get(handle)

	def release(self, rank, handle):
		with self._lock:
			return self._by_rank[rank].pop(handle, None)

#EOF
