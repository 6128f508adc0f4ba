"""Frozen configuration of the synthetic acceptance instance.

Keys are CLI flag names per subcommand; `ordrec.pipeline` replays them.
"""

ACCEPTANCE = {
    "gen-data": {
        "teams": 20, "stages": 3, "items-per-cell": 10, "users": 5000,
        "min-orders": 2, "max-orders": 20, "p-adv": 0.3, "p-switch": 0.05,
        "views-per-order": 3, "seed": 11,
    },
    "prepare": {"seq-len": 12, "tie-seed": 0},
    "train-embeddings": {
        "dim": 32, "window": 5, "negatives": 5, "epochs": 5, "lr": 0.025, "min-count": 1, "seed": 1,
    },
    "train": {
        "hidden1": 64, "hidden2": 64, "batch": 64, "epochs": 6, "lr": 0.003, "seed": 3, "val-frac": 0.2,
    },
    "evaluate": {"k": "1,10,50,100", "exact-wilcoxon-max-n": 20, "split": "validation", "seed": 5},
}

# seeds for drawing the stage-A / stage-C probe items in the directionality check
DIRECTION_PROBE_SEED = 2
DIRECTION_PROBES_PER_STAGE = 50
DIRECTION_TOP_K = 50
