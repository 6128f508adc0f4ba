"""Run every CLI stage in sequence with file handoffs, from a preset."""

from __future__ import annotations

from pathlib import Path

from ordrec import cli
from ordrec.errors import OrdrecError
from ordrec.presets import ACCEPTANCE


class StageFailed(OrdrecError):
    pass


def _flags(options: dict) -> list[str]:
    out = []
    for key, value in options.items():
        if value is True:
            out.append(f"--{key}")
        elif value is not False and value is not None:
            out += [f"--{key}", str(value)]
    return out


def run_pipeline(workdir, preset: dict = ACCEPTANCE, figures: bool = False) -> dict[str, Path]:
    """gen-data -> prepare -> train-embeddings -> train -> evaluate.

    Returns the paths of every produced file; raises StageFailed naming the
    stage and its exit code on the first failure.
    """
    w = Path(workdir)
    paths = {
        "data": w / "data",
        "prepared": w / "prepared",
        "embeddings": w / "embeddings.ordrec",
        "model": w / "model.ordrec",
        "report": w / "report.json",
    }
    paths["orders"] = paths["data"] / "orders.tsv"
    paths["views"] = paths["data"] / "views.tsv"
    paths["catalog"] = paths["data"] / "catalog.tsv"
    no_fig = {} if figures else {"no-figures": True}
    stages = [
        ("gen-data", {**preset["gen-data"], "out": paths["data"]}),
        ("prepare", {**preset["prepare"], "orders": paths["orders"], "views": paths["views"],
                     "out": paths["prepared"]}),
        ("train-embeddings", {**preset["train-embeddings"], "views": paths["prepared"] / "view_sequences",
                              "out": paths["embeddings"]}),
        ("train", {**preset["train"], "windows": paths["prepared"], "embeddings": paths["embeddings"],
                   "out": paths["model"], **no_fig}),
        ("evaluate", {**preset["evaluate"], "model": paths["model"], "windows": paths["prepared"],
                      "out": paths["report"], **no_fig}),
    ]
    for name, options in stages:
        code = cli.run([name, *_flags(options)])
        if code != 0:
            raise StageFailed(f"stage {name} exited with code {code}")
    return paths
