"""Localization from serving-cell RSSI history.

The package models a handset that only sees the tower it is camped on: a
grid-state hidden Markov model decodes a short history of (tower, RSSI)
observations into a location, and three classic single-sample localizers
(cell-ID, fingerprint KNN, Bayesian histogram matching) provide the
comparison points. A path-loss simulator generates reproducible survey
traces so the whole pipeline runs without field data.
"""

from .baselines import (
    FingerprintPoint,
    TowerDB,
    TowerEntry,
    UnlocalizableError,
    bayes_locate,
    cellid_locate,
    estimate_tower_locations,
    fingerprint_points,
    knn_locate,
    load_tower_csv,
    save_tower_csv,
)
from .estimators import (
    BayesLocalizer,
    CellIdLocalizer,
    HmmLocalizer,
    KnnLocalizer,
    make_estimator,
)
from .evaluation import (
    EvalReport,
    evaluate,
    export_cdf,
    summary_table,
    sweep_grid_len,
    sweep_window,
    tune_k,
)
from .geo import (
    CellIndex,
    GeoPoint,
    GridSpec,
    PlanarPoint,
    cell_center,
    cell_of,
    centroid,
    haversine,
    project,
    unproject,
)
from .hmm import (
    ConvergenceError,
    EmissionModel,
    HmmModel,
    StateSpace,
    TransitionModel,
    build_emissions,
    build_hmm,
    build_transitions,
    load_model,
    save_model,
    steady_state,
    track,
    viterbi,
)
from .ingest import (
    FingerprintDB,
    Observation,
    ScanFormatError,
    ScanRecord,
    build_fingerprint,
    load_db,
    parse_scans,
    quantize,
    read_scans,
    save_db,
    serving_only,
    write_scans,
)
from .sim import (
    PathLoss,
    SimWorld,
    Tower,
    avg_towers_per_scan,
    default_world,
    gen_trace,
    gen_trajectory,
    load_world,
    rssi_at,
    save_world,
)

__version__ = "0.1.0"
