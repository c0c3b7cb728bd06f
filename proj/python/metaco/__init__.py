"""Meta-learned heatmaps for TSP and MIS."""

from ._metaco import (
    Error,
    FeasibilityError,
    MisInstance,
    Model,
    OracleResult,
    ParameterError,
    ParseError,
    TspInstance,
    __version__,
    compute_drop,
    decode,
    evaluate,
    exact_mis,
    gen_er,
    gen_tsp,
    held_karp,
    insertion,
    read_instance,
    tour_cost,
    train,
    tsp_from_coords,
    violations,
    write_instance,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
