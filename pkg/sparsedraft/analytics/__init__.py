# coding=utf-8
"""
Experiment harness: workloads, the bandwidth cost model, benchmarks, selector comparisons and
tuning sweeps.
"""
from __future__ import absolute_import

from .benchmark import run_benchmark, summarise_stats, compare_selectors, overlap_by_distance
from .cost_model import HardwareModel, hardware_preset, cost_iteration_time, modeled_throughput
from .sweep import SweepRunner, sweep_step1_ratio, sweep_step2_gamma, sweep_step3_refine
from .workloads import Workload

__all__ = ['run_benchmark', 'summarise_stats', 'compare_selectors', 'overlap_by_distance', 'HardwareModel',
           'hardware_preset', 'cost_iteration_time', 'modeled_throughput', 'SweepRunner', 'sweep_step1_ratio',
           'sweep_step2_gamma', 'sweep_step3_refine', 'Workload']
