"""EP / ADF moment matching: clutter problem, Bayes Point Machine, loopy BP."""

import json

from ._core import (
    EpinferError,
    __version__,
    boyen_koller,
    bpm_train,
    clutter_adf,
    clutter_ep,
    clutter_exact,
    enumerate_network,
    generate_clutter,
    log_probit,
    loopy_ep,
    oracle_check,
    probit,
    probit_ratio,
    run_experiment,
)


def network(variables, factors):
    """Network JSON text from {id: cardinality} and [(id, scope, table)]."""
    return json.dumps(
        {
            "variables": [{"id": k, "cardinality": c} for k, c in variables.items()],
            "factors": [
                {"id": fid, "scope": list(scope), "table": list(table)}
                for fid, scope, table in factors
            ],
        }
    )


__all__ = [
    "EpinferError",
    "__version__",
    "boyen_koller",
    "bpm_train",
    "clutter_adf",
    "clutter_ep",
    "clutter_exact",
    "enumerate_network",
    "generate_clutter",
    "log_probit",
    "loopy_ep",
    "network",
    "oracle_check",
    "probit",
    "probit_ratio",
    "run_experiment",
]
