import csv
import hashlib
import json
import logging
import math
import os
import random
from dataclasses import dataclass, field

import h5py
import numpy as np
import torch
from scipy import stats
from tqdm import tqdm


class Logger():
    def __init__(self, log_dir):
        self.log_dir = log_dir
        self.handlers = {}
    def write(self, log_message, verbose=True):
        with open(self.log_dir, 'a') as f:
            f.write(log_message)
            f.write('\n')
        if verbose:
            tqdm.write(log_message)
    def attach(self, logger_name='proj_models', level=logging.INFO):
        """
        forwards records of the named logger into this log file
        """
        handler = _LoggerHandler(self)
        handler.setLevel(level)
        handler.setFormatter(logging.Formatter('[%(levelname)s %(name)s] %(message)s'))
        target = logging.getLogger(logger_name)
        target.setLevel(min(target.level or level, level))
        target.addHandler(handler)
        self.handlers[logger_name] = handler
        return handler
    def detach(self):
        for name, handler in self.handlers.items():
            logging.getLogger(name).removeHandler(handler)
        self.handlers = {}

class _LoggerHandler(logging.Handler):
    def __init__(self, logger):
        super(_LoggerHandler, self).__init__()
        self.logger = logger
    def emit(self, record):
        self.logger.write(self.format(record), verbose=record.levelno >= logging.WARNING)

def set_seeds(seed):
    torch.manual_seed(seed)
    np.random.seed(seed)
    random.seed(seed)

#results ================================

@dataclass
class CellResult:
    """
    in-memory output of one (sweep, seed) cell

    :tables: name -> list of row dicts, written as <name>.csv
    :summary: scalar results, written as summary.json
    :arrays: name -> ndarray, written to arrays.h5
    """
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)

def to_plain(obj):
    """
    numpy scalars and arrays to python types, non-finite floats to None
    """
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj

#serialization ================================

def _canonical(obj):
    obj = to_plain(obj)
    if isinstance(obj, dict):
        return {k: _canonical(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_canonical(v) for v in obj]
    if isinstance(obj, float):
        return format(obj, '.17g')
    return obj

def canonical_json(obj):
    """
    sorted keys, compact separators, floats as 17 significant digit strings
    """
    return json.dumps(_canonical(obj), sort_keys=True, separators=(',', ':'), ensure_ascii=True)

def config_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode('utf-8')).hexdigest()

def _format_cell(value):
    if isinstance(value, (float, np.floating)):
        return format(float(value), '.17g')
    if isinstance(value, (list, tuple, np.ndarray)):
        return json.dumps(to_plain(value))
    return value

def write_csv(path, rows):
    """
    header from the union of keys in first-seen order
    """
    header = []
    for row in rows:
        header.extend(k for k in row if k not in header)
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=header, quoting=csv.QUOTE_MINIMAL, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format_cell(v) for k, v in row.items()})

def read_csv(path):
    def parse(value):
        try:
            return float(value)
        except ValueError:
            return value
    with open(path, newline='') as f:
        return [{k: parse(v) for k, v in row.items()} for row in csv.DictReader(f)]

def write_json(path, obj, atomic=False):
    text = json.dumps(to_plain(obj), sort_keys=True, indent=2)
    target = path + '.tmp' if atomic else path
    with open(target, 'w') as f:
        f.write(text)
        f.write('\n')
    if atomic:
        os.replace(target, path)

def read_json(path):
    with open(path) as f:
        return json.load(f)

def write_h5(path, arrays):
    # track_times=False keeps reruns byte-identical
    with h5py.File(path, 'w') as f:
        for name in sorted(arrays):
            f.create_dataset(name, data=np.asarray(arrays[name]), track_times=False)

def read_h5(path):
    with h5py.File(path, 'r') as f:
        return {name: f[name][()] for name in f}

#statistics ================================

def loglog_slope(x, y):
    """
    least-squares slope and intercept of log y against log x
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if np.count_nonzero(keep) < 2:
        return float('nan'), float('nan')
    slope, intercept = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope), float(intercept)

def ks_distance(sample, reference):
    """
    KS statistic of a sample against a cdf callable or a second sample
    """
    if callable(reference):
        return float(stats.kstest(np.asarray(sample, dtype=float), reference).statistic)
    return float(stats.ks_2samp(np.asarray(sample, dtype=float), np.asarray(reference, dtype=float)).statistic)

def wasserstein1(sample_a, sample_b):
    return float(stats.wasserstein_distance(sample_a, sample_b))

def fit_linear_constant(x, y):
    """
    C in y ≈ C x by least squares through the origin, with the spread of y/x
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ratios = y / x
    return float(np.dot(x, y) / np.dot(x, x)), float((ratios.max() - ratios.min()) / ratios.mean())

#plotting ================================

def save_plot(path, series, xlabel, ylabel, title=None, log_scale=False):
    """
    :series: label -> (x, y)
    """
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (x, y) in series.items():
        ax.plot(x, y, marker='o', markersize=3, label=label)
    if log_scale:
        ax.set_xscale('log')
        ax.set_yscale('log')
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={'Software': None})
    plt.close(fig)
