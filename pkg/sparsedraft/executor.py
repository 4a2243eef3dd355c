# coding=utf-8
"""
Task executors: run independent generation sessions in-process or across a process pool.

Both expose the same small interface, and results always come back in submission order.
"""
from __future__ import absolute_import, division

import logging
from concurrent.futures import ProcessPoolExecutor


class SerialExecutor(object):
    @staticmethod
    def submit(func, *args, **kwargs):
        return func, args, kwargs

    @staticmethod
    def map(func, iterable):
        return [SerialExecutor.submit(func, data) for data in iterable]

    @staticmethod
    def results(futures):
        return [func(*args, **kwargs) for func, args, kwargs in futures]

    def __repr__(self):
        return 'SerialExecutor()'


def _init_worker_logging(level):
    handler = logging.StreamHandler()
    handler.formatter = logging.Formatter('%(asctime)s %(process)d %(name)s %(levelname)s %(message)s')
    logging.root.handlers = [handler]
    logging.root.setLevel(level)


class MultiprocessingExecutor(object):
    """
    Runs tasks in a process pool whose workers log at the parent's level.

    :param int workers: pool size; 0 or less uses one process per CPU
    """

    def __init__(self, workers):
        level = logging.getLogger('sparsedraft').getEffectiveLevel()
        self._pool = ProcessPoolExecutor(workers if workers > 0 else None, initializer=_init_worker_logging,
                                         initargs=(level,))
        self.workers = workers

    def submit(self, func, *args, **kwargs):
        return self._pool.submit(func, *args, **kwargs)

    def map(self, func, iterable):
        return [self.submit(func, data) for data in iterable]

    @staticmethod
    def results(futures):
        return [future.result() for future in futures]

    def __repr__(self):
        return 'MultiprocessingExecutor(workers=%r)' % self.workers


def get_executor(workers):
    """
    Return a task executor based on input parameters.

    :param workers: Number of processes to start for process based parallel execution; falsy runs serially

    >>> get_executor(None)
    SerialExecutor()
    """
    if not workers:
        return SerialExecutor()
    return MultiprocessingExecutor(workers)
