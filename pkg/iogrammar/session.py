"""
Per-rank tracing sessions.

A `RankTracer` receives the prologue (`begin_call`) and epilogue (`end_call`) of every
intercepted call of one process. It tracks call depth per thread, applies the runtime
filter, substitutes group-wide handle ids, encodes offsets, interns the call signature
and appends the resulting terminal to the rank's grammar.

* `TIME_RESOLUTION`: Seconds per clock tick.
* `FilterConfig`: Path prefixes and enabled layers.
* `CallToken`: What `begin_call` hands back to the caller.
* `RankLocal`: Immutable per-rank result of a session.
* `RankTracer`: The session itself.
"""
import os
import logging
import threading

from dataclasses import dataclass
from itertools import count as counter
from typing import Optional, Tuple

from iogrammar.model import (
	MAX_CALL_DEPTH, KNOWN_LAYERS, I64_MIN, I64_MAX, Int, Str, Handle, UniqueHandle, Offset, Literal,
	CallRecord, CallSignature, as_arg, encode_fields
)
from iogrammar.grammar import Grammar, GrammarBuilder
from iogrammar.cst import SignatureTable
from iogrammar.pattern import PatternStore, HandleRegistry, masked_key
from iogrammar.exceptions import DepthOverflow, StackMismatch, UnbalancedCalls, InvalidRecord

logger = logging.getLogger(__name__)

__all__ = [
	'TIME_RESOLUTION',
	'FilterConfig',
	'CallToken',
	'RankLocal',
	'RankTracer'
]

TIME_RESOLUTION = 1e-7
""" Seconds per clock tick. Timestamps are stored as 4-byte tick counts."""

#------------------------------------------------------------------------------
# Filtering
#------------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterConfig:
	"""
	Runtime filter.

	Attributes:
		- `prefixes`(tuple of str): A call carrying a path is recorded only if the path starts
			with one of these. Empty disables path filtering.
		- `layers`(frozenset of str): Layers whose calls are recorded.
	"""
	prefixes: Tuple[str, ...] = ()
	layers: frozenset = frozenset(KNOWN_LAYERS)

	def __post_init__(self):
		object.__setattr__(self, 'prefixes', tuple(self.prefixes))
		object.__setattr__(self, 'layers', frozenset(self.layers))
		for prefix in self.prefixes:
			if not isinstance(prefix, str) or len(prefix) == 0:
				raise ValueError("Expected non-empty prefix strings but got %r" % (prefix,))
		for layer in self.layers:
			if layer not in KNOWN_LAYERS:
				raise ValueError("Expected layers among %s but got %r" % (KNOWN_LAYERS, layer))

	@classmethod
	def from_env(cls, prefixes=None, layers=None):
		"""
		Builds a filter from the environment. Keyword arguments win over environment values.

		* `IOGRAMMAR_PREFIXES`: `os.pathsep`-separated prefixes.
		* `IOGRAMMAR_POSIX`, `IOGRAMMAR_MPIIO`, `IOGRAMMAR_MPI`, `IOGRAMMAR_HDF5`: `0` disables the layer.
		"""
		if prefixes is None:
			value = os.getenv('IOGRAMMAR_PREFIXES', '')
			prefixes = [p for p in value.split(os.pathsep) if p]
		if layers is None:
			layers = [layer for layer in KNOWN_LAYERS if os.getenv('IOGRAMMAR_%s' % layer.upper(), '1') != '0']

		return cls(prefixes=tuple(prefixes), layers=frozenset(layers))

	def to_dict(self) -> dict:
		return {'prefixes': list(self.prefixes), 'layers': sorted(self.layers)}

	def enabled(self, layer) -> bool:
		return layer in self.layers

	def matches(self, path) -> bool:
		return len(self.prefixes) == 0 or any(path.startswith(p) for p in self.prefixes)

#------------------------------------------------------------------------------
# Session
#------------------------------------------------------------------------------

@dataclass(frozen=True)
class CallToken:
	thread_id: int
	func: int
	depth: int
	t_entry: int
	serial: int

@dataclass(frozen=True)
class RankLocal:
	"""
	Snapshot of one rank at finalization.
	"""
	rank: int
	grammar: Grammar
	table: SignatureTable
	timestamps: Tuple[Tuple[int, int], ...]
	filtered: int = 0

	@property
	def calls(self) -> int:
		return len(self.timestamps)

class RankTracer:
	"""
	Tracing session of one rank.

	Args:
	- **rank (int)**: Rank of the process.
	- **registry (FunctionRegistry)**: Shared function registry.
	- **handles (HandleRegistry, optional)**: Shared group-wide handle registry. A private one is created if omitted.
	- **filter (FilterConfig, optional)**: Runtime filter. None records every call.
	- **intra_pattern (bool, optional)**: Encode offsets as `i*a + b` patterns. Defaults to True.
	- **call_ticks (int, optional)**: Clock ticks from entry to exit of a call. Defaults to 1.
	- **gap_ticks (int, optional)**: Clock ticks after the exit of a call. Defaults to 1.
	- **oracle (list, optional)**: When given, every recorded call is appended to it as a decoded `CallRecord`.
	"""
	def __init__(self, rank, registry, handles=None, filter=None, intra_pattern=True, call_ticks=1, gap_ticks=1, oracle=None):
		if call_ticks < 0 or gap_ticks < 0:
			raise ValueError("Clock increments must be non-negative but got %d and %d" % (call_ticks, gap_ticks))

		self.rank          = rank
		self.registry      = registry
		self.handles       = handles if handles is not None else HandleRegistry()
		self.filter        = filter
		self.intra_pattern = intra_pattern
		self.oracle        = oracle

		self._call_ticks = call_ticks
		self._gap_ticks  = gap_ticks
		self._now        = 0
		self._serial     = counter()
		self._lock       = threading.Lock()
		self._stacks     = {}
		self._tracked    = set()
		self._filtered   = 0

		self.patterns   = PatternStore()
		self.table      = SignatureTable()
		self.builder    = GrammarBuilder()
		self.timestamps = []

	def __repr__(self):
		return 'RankTracer(rank=%d, calls=%d, entries=%d)' % (self.rank, len(self.timestamps), len(self.table))

	@property
	def now(self) -> int:
		return self._now

	def advance(self, ticks):
		"""
		Moves the clock forward, e.g. to model compute time between I/O phases.
		"""
		with self._lock:
			self._now += ticks

	def begin_call(self, thread_id, func) -> CallToken:
		"""
		Prologue of an intercepted call.

		Args:
		- **thread_id (int)**: Calling thread.
		- **func (int)**: Function id.

		Returns:
		- **CallToken**: To be handed to `end_call`.

		Raises:
		- **DepthOverflow**: If the thread is already `MAX_CALL_DEPTH + 1` calls deep.
		"""
		self.registry.info(func)
		with self._lock:
			stack = self._stacks.setdefault(thread_id, [])
			if len(stack) > MAX_CALL_DEPTH:
				raise DepthOverflow("Thread %d of rank %d nests deeper than %d calls" % (thread_id, self.rank, MAX_CALL_DEPTH))

			token = CallToken(thread_id, func, len(stack), self._now, next(self._serial))
			stack.append(token)
			self._now += self._call_ticks

			return token

	def end_call(self, token, args=()) -> bool:
		"""
		Epilogue of an intercepted call.

		Args:
		- **token (CallToken)**: Token returned by the matching `begin_call`.
		- **args (sequence)**: Arguments in declaration order, return value included when declared.
			Plain ints and strs are accepted; offset slots must hold integers.

		Returns:
		- **bool**: Whether the call was recorded.

		Raises:
		- **StackMismatch**: If `token` is not the innermost open call of its thread.
		- **InvalidRecord**: If the arguments do not match the registry.
		"""
		info = self.registry.info(token.func)
		args = tuple(as_arg(a) for a in args)
		if len(args) != info.arity:
			raise InvalidRecord("%s expects %d arguments but got %d" % (info.name, info.arity, len(args)))

		with self._lock:
			stack = self._stacks.get(token.thread_id)
			if not stack or stack[-1] != token:
				raise StackMismatch("%s completed out of order on thread %d of rank %d" % (info.name, token.thread_id, self.rank))
			stack.pop()

			t_exit = self._now
			self._now += self._gap_ticks

			self._check(info, token, args)
			if not self._accept(info, args):
				self._filtered += 1
				return False

			self._record(info, token, t_exit, args)
			return True

	def call(self, thread_id, func, args=()) -> bool:
		"""
		Traces a call without nested calls: `begin_call` immediately followed by `end_call`.
		"""
		return self.end_call(self.begin_call(thread_id, func), args)

	def _check(self, info, token, args):
		"""
		Rejects a call before any session state depends on it.
		"""
		for slot in info.offset_slots:
			arg = args[slot]
			if not isinstance(arg, Int):
				raise InvalidRecord("%s: offset slot %d needs an integer but got %r" % (info.name, slot, arg))
			if not I64_MIN <= arg.value <= I64_MAX:
				raise InvalidRecord("%s: offset %d does not fit 64 bits" % (info.name, arg.value))
		encode_fields(info.id, args, token.thread_id, token.depth)

	def _accept(self, info, args) -> bool:
		if self.filter is None:
			return True
		if not self.filter.enabled(info.layer):
			return False
		if len(self.filter.prefixes) == 0:
			return True

		if info.path_slots:
			paths = [args[slot].value for slot in info.path_slots if isinstance(args[slot], Str)]
			if not any(self.filter.matches(p) for p in paths):
				return False
			if info.creates_handle is not None:
				self._tracked.add(args[info.creates_handle].value)
			return True

		if info.handle_slots:
			handles = [args[slot].value for slot in info.handle_slots if isinstance(args[slot], (Int, Handle))]
			if not any(h in self._tracked for h in handles):
				return False
			if info.closes_handle:
				self._tracked.difference_update(handles)
			return True

		return True

	def _substitute_handles(self, info, args) -> tuple:
		slots = set(info.handle_slots)
		if info.creates_handle is not None:
			slots.add(info.creates_handle)

		out = list(args)
		for slot in slots:
			arg = args[slot]
			if isinstance(arg, Handle):
				uid = self.handles.lookup(self.rank, arg.value)
				if uid is not None:
					out[slot] = UniqueHandle(uid)
					if info.closes_handle:
						self.handles.release(self.rank, arg.value)

		return tuple(out)

	def _record(self, info, token, t_exit, args):
		args = self._substitute_handles(info, args)

		slots = sorted(info.offset_slots)
		encoded = args
		if slots:
			offsets = [args[slot].value for slot in slots]

			if self.intra_pattern:
				key = masked_key(info.id, args, token.thread_id, token.depth, slots)
				patterns = self.patterns.encode_offsets(key, offsets)
			else:
				patterns = [Literal(v) for v in offsets]

			encoded = list(args)
			for slot, pattern in zip(slots, patterns):
				encoded[slot] = Offset(pattern)
			encoded = tuple(encoded)

		sig = CallSignature(encode_fields(info.id, encoded, token.thread_id, token.depth))
		self.builder.append(self.table.intern(sig))
		self.timestamps.append((token.t_entry, t_exit))

		if self.oracle is not None:
			self.oracle.append(CallRecord(info.id, args, token.thread_id, token.depth, token.t_entry, t_exit))

	def finalize_rank(self) -> RankLocal:
		"""
		Closes the session.

		Returns:
		- **RankLocal**: Grammar snapshot, signature table, timestamp log and filter count.

		Raises:
		- **UnbalancedCalls**: If a thread still has calls in flight.
		"""
		with self._lock:
			open_calls = {tid: len(stack) for tid, stack in self._stacks.items() if stack}
			if open_calls:
				raise UnbalancedCalls("Rank %d finalized with calls in flight: %s" % (self.rank, open_calls))

			logger.debug(
				"Rank %d: %d calls recorded, %d filtered, %d signatures",
				self.rank, len(self.timestamps), self._filtered, len(self.table)
			)

			return RankLocal(
				rank       = self.rank,
				grammar    = self.builder.snapshot(),
				table      = self.table.copy(),
				timestamps = tuple(self.timestamps),
				filtered   = self._filtered
			)

#EOF
