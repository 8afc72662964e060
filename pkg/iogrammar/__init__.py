"""
A Python package for compressing parallel I/O call traces with grammars:

* `iogrammar.model`: call records, argument kinds, signatures and the function registry.
* `iogrammar.grammar`: run-length grammar inference (Sequitur with exponents).
* `iogrammar.cst`: per-rank call signature tables and their merge.
* `iogrammar.pattern`: offset patterns within and across ranks, collective handles.
* `iogrammar.session`: per-rank recording session and runtime filter.
* `iogrammar.finalize`: cross-rank merge of tables and grammars.
* `iogrammar.archive`: on-disk trace archive, writer and reader.
* `iogrammar.converters`: Chrome timeline, CSV, text dump and statistics.
* `iogrammar.harness`: simulated workloads and verification against an oracle.
* `iogrammar.cli`: the `iogrammar` command.
* `iogrammar.utils`: utility functions.

Enjoy!
"""
__version__ = '0.1.0'

#EOF
