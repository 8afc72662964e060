"""
Utility functions for the files an archive and its exports are made of.

**Paths**
* `ospathjoin`: Joins a pathname and a filename, handling None.
* `make_directory`: Creates a directory if it doesn't exist.
* `is_csv_file`: Checks if a filename has the `.csv` extension.
* `is_json`: Checks if a filename has the `.json` extension.
* `file_size`: Size of a file in bytes.

**Binary files**
* `read_bytes`: Reads a whole file.
* `write_bytes`: Writes a whole file.

**JSON**
* `read_json`: Reads a JSON file.
* `to_json`: Writes a JSON file.

**Dataframes**
* `read_dataframe`: Reads a CSV file into a Pandas DataFrame.
* `to_dataframe`: Writes a Pandas DataFrame to a CSV file.
"""
import os
import json
import pandas

from pandas.core.frame import DataFrame

from iogrammar.exceptions import IoFailure

__all__ = [
	'ospathjoin',
	'make_directory',
	'is_csv_file',
	'is_json',
	'file_size',
	'read_bytes',
	'write_bytes',
	'read_json',
	'to_json',
	'read_dataframe',
	'to_dataframe'
]

#------------------------------------------------------------------------------
# Paths
#------------------------------------------------------------------------------

def ospathjoin(pathname, filename):
	"""
	Joins a pathname and filename, handling potential None values.

	Args:
		pathname: The pathname to join. Can be None if no pathname is required.
		filename: The filename to join.

	Returns:
		The joined path, or the filename itself if pathname is None.

	Example:
		ospathjoin("traces/run1", "cst.dat") # Output: "traces/run1/cst.dat"
		ospathjoin(None, "cst.dat") # Output: "cst.dat"
	"""
	if pathname is not None:
		return os.path.join(pathname, filename)
	else:
		return filename

def make_directory(path, folder=None):
	"""
	Creates a directory, and its missing parents, if it doesn't exist.

	Args:
		path: The base path to create the directory in.
		folder: The name of the subdirectory to create. If None, creates the directory at the specified path. Defaults to None.

	Returns:
		The full path to the created directory.

	Raises:
		IoFailure: If the directory cannot be created.
	"""
	if folder is not None:
		path = os.path.join(path, str(folder))
	try:
		os.makedirs(path, exist_ok=True)
	except OSError as e:
		raise IoFailure("Cannot create directory %s: %s" % (path, e)) from e

	return path

def is_csv_file(filename):
	"""
	Checks if a filename represents a CSV (Comma-Separated Values) file.

	Example:
		is_csv_file("trace.csv") # True
		is_csv_file("trace.CSV") # True (case-insensitive)
	"""
	if isinstance(filename, str):
		return filename.lower().endswith('.csv')
	else:
		return False

def is_json(filename):
	"""
	Checks if a filename represents a JSON (JavaScript Object Notation) file.

	Example:
		is_json("timeline.json") # True
		is_json("trace.csv") # False
	"""
	if isinstance(filename, str):
		return filename.lower().endswith('.json')
	else:
		return False

def file_size(filename, pathname=None):
	return os.path.getsize(ospathjoin(pathname, filename))

#------------------------------------------------------------------------------
# I/O
#------------------------------------------------------------------------------

def read_bytes(filename, pathname=None):
	"""
	Reads a whole binary file.

	Raises:
		IoFailure: If the file cannot be read.
	"""
	try:
		with open(ospathjoin(pathname, filename), 'rb') as f:
			return f.read()
	except OSError as e:
		raise IoFailure("Cannot read %s: %s" % (ospathjoin(pathname, filename), e)) from e

def write_bytes(data, filename, pathname=None):
	"""
	Writes a whole binary file, replacing any previous content.

	Raises:
		IoFailure: If the file cannot be written.
	"""
	try:
		with open(ospathjoin(pathname, filename), 'wb') as f:
			f.write(data)
	except OSError as e:
		raise IoFailure("Cannot write %s: %s" % (ospathjoin(pathname, filename), e)) from e

	return None

def read_json(filename, pathname=None):
	"""
	Reads a JSON file.

	Args:
		filename: The name of the JSON file.
		pathname: The optional pathname of the directory containing the file. Defaults to None.

	Returns:
		The decoded JSON document.
	"""
	with open(ospathjoin(pathname, filename), "r", encoding='utf-8') as read_file:
		json_dict = json.load(read_file)
	return json_dict

def to_json(json_dict, filename, pathname=None, indent=None):
	"""
	Saves a JSON document to a file.

	Args:
		json_dict: The document to save.
		filename: The name of the JSON file to save.
		pathname: The optional pathname of the directory to save the file in. Defaults to None.
		indent: The number of spaces to use for indentation. Defaults to None (compact).
	"""
	with open(ospathjoin(pathname, filename), "w", encoding='utf-8') as write_file:
		json.dump(json_dict, write_file, indent=indent)
	return None

def read_dataframe(filename, pathname=None, columns=None, encoding='utf-8', delimiter=',', dtype=None):
	"""
	Reads a CSV file into a Pandas DataFrame.

	Args:
		filename: The name of the CSV file.
		pathname: The optional pathname of the directory containing the file. Defaults to None.
		columns: A list of column names to read. If None, reads all columns. Defaults to None.
		encoding: The encoding of the CSV file. Defaults to 'utf-8'.
		delimiter: The delimiter used in the CSV file. Defaults to ','.
		dtype: Column types, passed to `pandas.read_csv`. Defaults to None.

	Returns:
		A Pandas DataFrame containing the data from the CSV file.
	"""
	return pandas.read_csv(
		ospathjoin(pathname, filename),
		encoding  = encoding,
		delimiter = delimiter,
		usecols   = columns,
		dtype     = dtype
	)

def to_dataframe(dataframe: DataFrame, filename, pathname=None, encoding='utf-8', delimiter=',', with_index=False, usecols=None):
	"""
	Saves a Pandas DataFrame to a CSV file. Fields are quoted when needed (RFC 4180).

	Args:
		dataframe: The Pandas DataFrame to save.
		filename: The name of the CSV file to save, or an open text stream.
		pathname: The optional pathname of the directory to save the file in. Defaults to None.
		encoding: The encoding to use for the CSV file. Defaults to 'utf-8'.
		delimiter: The delimiter to use in the CSV file. Defaults to ','.
		with_index: If True, includes the index in the CSV file. Defaults to False.
		usecols: A list of column names to save. If None, saves all columns. Defaults to None.
	"""
	target = filename if hasattr(filename, 'write') else ospathjoin(pathname, filename)
	dataframe.to_csv(
		target,
		encoding       = encoding,
		sep            = delimiter,
		index          = with_index,
		columns        = usecols,
		lineterminator = '\r\n'
	)

	return None

#EOF
