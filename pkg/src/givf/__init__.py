"""Grouped inverted-file search over compressed vectors.

Large coarse codebooks assigned through a layered proximity graph, regions
split into groups anchored between neighboring centroids, score-based group
pruning, and compressed-domain distance estimation with a per-point constant
byte. Attributes load lazily so configuring thread limits stays cheap.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # dataset handling
    "read_vecs": ".vecio",
    "write_vecs": ".vecio",
    "synth_clustered": ".datasets",
    "l2_normalize": ".datasets",
    "exact_ground_truth": ".datasets",
    # codebooks
    "CoarseCodebook": ".kmeans",
    "train_kmeans": ".kmeans",
    "assign_exact": ".kmeans",
    "PQCodebook": ".pq",
    "train_pq": ".pq",
    "pq_encode": ".pq",
    "pq_decode": ".pq",
    "build_lookup_table": ".pq",
    # assignment graph
    "ProximityGraph": ".graph",
    "build_graph": ".graph",
    "search_graph": ".graph",
    "assign_batch": ".graph",
    # grouping
    "neighbor_centroids": ".grouping",
    "learn_alpha": ".grouping",
    "assign_subcentroid": ".grouping",
    "ConstQuantizer": ".grouping",
    # index
    "BuildParams": ".index",
    "GroupedIndex": ".index",
    "build_index": ".index",
    "memory_report": ".index",
    "save_index": ".storage",
    "load_index": ".storage",
    # search
    "SearchParams": ".search",
    "SearchResult": ".search",
    "search": ".search",
    "decomposed_distance": ".search",
    "recall_at_r": ".search",
    "sweep": ".search",
    "write_sweep_csv": ".search",
    # configuration
    "RunConfig": ".config",
    "resolve_config": ".config",
    # errors
    "GivfError": ".errors",
    "ConfigError": ".errors",
    "VecsFormatError": ".errors",
    "StorageError": ".errors",
    "InvariantError": ".errors",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    if name in _EXPORTS:
        module = importlib.import_module(_EXPORTS[name], __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
