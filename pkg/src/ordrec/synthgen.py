"""Synthetic catalogs and purchase/view histories with a planted one-way
lifecycle: a user's stage never goes backwards, and team loyalty is sticky."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ordrec.corpus import OrderEvent, write_events
from ordrec.errors import DataError

MAX_ITEM_ID = 2**31 - 1
HOUR_MS = 3_600_000
DAY_MS = 24 * HOUR_MS


@dataclass(frozen=True)
class SyntheticCatalog:
    n_teams: int
    n_stages: int
    items_per_cell: int
    seed: int
    item_ids: np.ndarray    # (n_teams, n_stages, items_per_cell)

    @property
    def n_items(self) -> int:
        return self.item_ids.size

    def cell_items(self, team: int, stage: int) -> np.ndarray:
        return self.item_ids[team, stage]

    def cell_of(self) -> dict[int, tuple[int, int]]:
        """item_id -> (team, stage)."""
        out = {}
        for t in range(self.n_teams):
            for s in range(self.n_stages):
                for item in self.item_ids[t, s]:
                    out[int(item)] = (t, s)
        return out

    def stage_of(self) -> dict[int, int]:
        return {i: s for i, (_, s) in self.cell_of().items()}


@dataclass(frozen=True)
class GenParams:
    n_users: int = 5000
    min_orders: int = 2
    max_orders: int = 20
    p_adv: float = 0.3
    p_switch: float = 0.05
    views_per_order: int = 3
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p_adv <= 1.0 and 0.0 <= self.p_switch <= 1.0):
            raise DataError("probabilities must lie in [0, 1]")
        if self.min_orders < 2 or self.max_orders < self.min_orders:
            raise DataError("need 2 <= min_orders <= max_orders")
        if self.n_users < 1 or self.views_per_order < 1:
            raise DataError("n_users and views_per_order must be >= 1")


def gen_catalog(n_teams: int = 20, n_stages: int = 3, items_per_cell: int = 10, seed: int = 0) -> SyntheticCatalog:
    """Dense ids 1..N assigned to cells in a seeded random order, so an item's
    id carries no information about its team or stage."""
    if min(n_teams, n_stages, items_per_cell) < 1:
        raise DataError("catalog dimensions must be >= 1")
    n = n_teams * n_stages * items_per_cell
    if n > MAX_ITEM_ID:
        raise DataError(f"catalog of {n} items overflows the item id range")
    rng = np.random.default_rng(seed)
    ids = rng.permutation(n).astype(np.int64) + 1
    return SyntheticCatalog(n_teams, n_stages, items_per_cell, seed,
                            ids.reshape(n_teams, n_stages, items_per_cell))


def gen_histories(catalog: SyntheticCatalog, params: GenParams = GenParams()):
    """Markov walk over (team, stage) per user.

    Returns (orders, views) as event lists. Each order draws an item uniformly
    from the current cell; before each order the user browses
    ``views_per_order - 1`` other items from the same cell, and the purchased
    item is also logged as a view.
    """
    rng = np.random.default_rng(params.seed)
    orders: list[OrderEvent] = []
    views: list[OrderEvent] = []
    width = len(str(params.n_users - 1))
    for u in range(params.n_users):
        user = f"u{u:0{width}d}"
        n_orders = int(rng.integers(params.min_orders, params.max_orders + 1))
        team = int(rng.integers(catalog.n_teams))
        stage = int(rng.integers(catalog.n_stages))
        t = int(rng.integers(0, 365 * DAY_MS))
        for j in range(n_orders):
            if j > 0:
                if stage < catalog.n_stages - 1 and rng.random() < params.p_adv:
                    stage += 1
                if catalog.n_teams > 1 and rng.random() < params.p_switch:
                    team = int((team + rng.integers(1, catalog.n_teams)) % catalog.n_teams)
            cell = catalog.cell_items(team, stage)
            t += int(rng.integers(HOUR_MS, 30 * DAY_MS))
            for v in range(params.views_per_order - 1):
                browse = int(cell[rng.integers(len(cell))])
                views.append(OrderEvent(user, t - (params.views_per_order - 1 - v) * 60_000, browse))
            item = int(cell[rng.integers(len(cell))])
            views.append(OrderEvent(user, t, item))
            orders.append(OrderEvent(user, t, item))
    return orders, views


def write_catalog(path: str | Path, catalog: SyntheticCatalog) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# item_id\tteam\tstage\n")
        for item, (team, stage) in sorted(catalog.cell_of().items()):
            fh.write(f"{item}\t{team}\t{stage}\n")


def read_catalog_stages(path: str | Path) -> dict[int, tuple[int, int]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            item, team, stage = line.split("\t")
            out[int(item)] = (int(team), int(stage))
    return out


def write_dataset(out_dir: str | Path, catalog: SyntheticCatalog, orders, views) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"orders": out / "orders.tsv", "views": out / "views.tsv", "catalog": out / "catalog.tsv"}
    write_events(paths["orders"], orders)
    write_events(paths["views"], views)
    write_catalog(paths["catalog"], catalog)
    return paths
