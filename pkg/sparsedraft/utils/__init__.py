# coding=utf-8
"""
Utility functions shared across the engine, harness and command-line tools.
"""
from __future__ import absolute_import, division, print_function

import gzip
import json
import logging
import pathlib
from collections import OrderedDict

import jsonschema
import numpy
import yaml

try:
    from yaml import CSafeLoader as SafeLoader
except ImportError:
    from yaml import SafeLoader

_LOG = logging.getLogger(__name__)


def clamp(x, l, u):
    """
    clamp x to be l <= x <= u

    >>> clamp(5, 1, 10)
    5
    >>> clamp(-1, 1, 10)
    1
    >>> clamp(12, 1, 10)
    10
    """
    assert l <= u
    return l if x < l else u if x > u else x


def round_half_up(x):
    """
    Round to the nearest integer, halves away from zero for non-negative input.

    >>> round_half_up(2.5)
    3
    >>> round_half_up(3.5)
    4
    >>> round_half_up(0.49)
    0
    """
    return int(numpy.floor(x + 0.5))


###
# Functions for working with YAML/JSON documents and configurations
###

_DOCUMENT_EXTENSIONS = ('.yaml', '.yml', '.json')
_COMPRESSION_EXTENSIONS = ('', '.gz')
_ALL_SUPPORTED_EXTENSIONS = tuple(doc_type + compression_type
                                  for doc_type in _DOCUMENT_EXTENSIONS
                                  for compression_type in _COMPRESSION_EXTENSIONS)


def read_documents(*paths):
    """
    Read & parse documents from the filesystem (yaml or json).

    Note that a single yaml file can contain multiple documents.

    :type paths: list[pathlib.Path]
    :rtype: tuple[(pathlib.Path, dict)]
    """
    for path in paths:
        path = pathlib.Path(path)
        suffix = path.suffix.lower()

        # If compressed, open as gzip stream.
        opener = open
        if suffix == '.gz':
            suffix = path.suffixes[-2].lower()
            opener = gzip.open

        if suffix in ('.yaml', '.yml'):
            try:
                with opener(str(path), 'rt') as f:
                    for parsed_doc in yaml.load_all(f, Loader=SafeLoader):
                        yield path, parsed_doc
            except yaml.YAMLError as e:
                raise InvalidDocException('Failed to load %s: %s' % (path, e))
        elif suffix == '.json':
            try:
                with opener(str(path), 'rt') as f:
                    yield path, json.load(f)
            except ValueError as e:
                raise InvalidDocException('Failed to load %s: %s' % (path, e))
        else:
            raise InvalidDocException('Unknown document type for {}; expected one of {!r}.'
                                      .format(path.name, _ALL_SUPPORTED_EXTENSIONS))


def read_document(path):
    """
    Read the single document held in `path`.

    :rtype: dict
    """
    docs = list(read_documents(path))
    if len(docs) != 1:
        raise InvalidDocException('Expected exactly one document in %s, found %d' % (path, len(docs)))
    return docs[0][1]


def validate_document(document, schema):
    try:
        jsonschema.Draft4Validator.check_schema(schema)
        validator = jsonschema.Draft4Validator(schema)
        validator.validate(document)
    except jsonschema.ValidationError as e:
        path = '.'.join(str(p) for p in e.absolute_path)
        raise InvalidDocException('%s: %s' % (path, e.message) if path else e.message)


def schema_validated(schema):
    """
    Decorate a class to enable validating its definition against a JSON Schema file.

    Adds a cls.validate() classmethod which takes a dict used to populate the instantiated class.

    :param pathlib.Path schema: filename of the json schema
    :return: wrapped class
    """

    def validate(cls, document):
        return validate_document(document, cls.schema)

    def decorate(cls):
        cls.schema = next(iter(read_documents(schema)))[1]
        cls.validate = classmethod(validate)
        return cls

    return decorate


def merge_documents(base, override):
    """
    Recursively merge `override` into a copy of `base`. Mappings merge, everything else replaces.

    >>> merge_documents({'a': {'b': 1, 'c': 2}}, {'a': {'c': 3}, 'd': 4}) == {'a': {'b': 1, 'c': 3}, 'd': 4}
    True
    >>> merge_documents({'a': [1, 2]}, {'a': [3]})
    {'a': [3]}
    """
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_documents(merged[key], value)
        else:
            merged[key] = value
    return merged


def generate_table(rows):
    """
    Yield strings to print a table using the data in `rows`.

    :param rows: A sequence of sequences with the 0th element being the table
                 header

    >>> for line in generate_table([('name', 'passed'), ('window', '3'), ('quest', '12')]):
    ...     print(line)
    name   | passed
    -------+-------
    window | 3
    quest  | 12
    """

    # - figure out column widths
    widths = [len(max(columns, key=len)) for columns in zip(*rows)]

    # - print the header
    header, data = rows[0], rows[1:]
    yield (
        ' | '.join(format(title, "%ds" % width) for width, title in zip(widths, header)).rstrip()
    )

    # Print the separator
    first_col = ''
    # - print the data
    for row in data:
        if first_col == '' and row[0] != '':
            # - print the separator
            yield '-+-'.join('-' * width for width in widths)
        first_col = row[0]

        yield (
            " | ".join(format(cdata, "%ds" % width) for width, cdata in zip(widths, row)).rstrip()
        )


class SparseDraftException(Exception):
    """The speculative decoding engine has malfunctioned"""
    pass


class InvalidDocException(SparseDraftException):
    pass


class ContextOverflowError(SparseDraftException):
    """Positions or cached tokens would exceed the model's max_context."""
    pass


class SelectionError(SparseDraftException):
    pass


def jsonify_document(doc):
    """
    Make a document ready for serialisation as JSON.

    Returns the new document, leaving the original unmodified.

    >>> sorted(jsonify_document({'a': (1.0, 2.0), 'b': float("inf"), 'c': numpy.int64(3)}).items())
    [('a', (1.0, 2.0)), ('b', 'Infinity'), ('c', 3)]
    >>> # Converts keys to strings:
    >>> sorted(jsonify_document({1: 'a', '2': 'b'}).items())
    [('1', 'a'), ('2', 'b')]
    >>> jsonify_document({'k': numpy.arange(3)})
    {'k': [0, 1, 2]}
    """

    def fixup(v):
        if isinstance(v, dict):
            pairs = ((str(key), fixup(value)) for key, value in v.items())
            return OrderedDict(pairs) if isinstance(v, OrderedDict) else dict(pairs)
        if isinstance(v, tuple):
            return tuple(fixup(item) for item in v)
        if isinstance(v, numpy.ndarray):
            v = v.tolist()
        if isinstance(v, list):
            return [fixup(item) for item in v]
        if isinstance(v, numpy.generic):
            v = v.item()
        if isinstance(v, float):
            if v != v:
                return "NaN"
            if v == float("inf"):
                return "Infinity"
            if v == float("-inf"):
                return "-Infinity"
            return v
        if isinstance(v, numpy.dtype):
            return v.name
        if isinstance(v, pathlib.PurePath):
            return str(v)
        return v

    return fixup(doc)
