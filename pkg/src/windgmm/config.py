"""Scenario configuration and the TOML file interfaces.

A scenario file bundles everything one run needs: farm coordinates (and,
for synthetic data, the per-farm ground-truth mixtures), the component
count, consensus and fit controls, key-node fraction, seed, and optional
link cuts.  Topologies and hyperparameters have their own small TOML
formats.  Node ids are 1-based in every file and on the CLI; in-memory
indices are 0-based.
"""

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import toml as toml_writer
import tomli

from .errors import ValidationError
from .fitting import FitConfig, Hyperparams
from .mixture import GmmParams
from .network import ConsensusConfig, build_topology


@dataclass(frozen=True)
class FarmSpec:
    """One farm's position and (for synthetic scenarios) its truth."""

    farm_id: str
    x_km: float
    y_km: float
    capacity_mw: float | None = None
    truth: GmmParams | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    train_samples: int
    test_samples: int
    components: int
    key_fraction: float
    threshold_km: float
    farms: tuple
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    csv_dir: Path | None = None
    hyper_overrides: dict = field(default_factory=dict)
    link_cuts: tuple = ()

    @property
    def n_farms(self):
        return len(self.farms)

    def coordinates(self):
        return [[f.x_km, f.y_km] for f in self.farms]

    def truths(self):
        missing = [f.farm_id for f in self.farms if f.truth is None]
        if missing:
            raise ValidationError(
                "scenario has no csv_dir and farms without truth mixtures: "
                + ", ".join(missing)
            )
        return [f.truth for f in self.farms]

    def build_topology(self):
        return build_topology(self.coordinates(), self.threshold_km)


def _require(table, key, path):
    if key not in table:
        raise ValidationError(f"{path}: missing required key {key!r}")
    return table[key]


def load_scenario(path):
    """Parse and validate a scenario TOML file."""
    path = Path(path)
    with open(path, "rb") as handle:
        doc = tomli.load(handle)

    sc = _require(doc, "scenario", path)
    farms_doc = _require(doc, "farms", path)
    farms = []
    for entry in farms_doc:
        truth = None
        if "truth_weights" in entry:
            truth = GmmParams(
                weights=entry["truth_weights"],
                means=_require(entry, "truth_means", path),
                covariances=_require(entry, "truth_covariances", path),
            )
        farms.append(FarmSpec(
            farm_id=str(_require(entry, "id", path)),
            x_km=float(_require(entry, "x_km", path)),
            y_km=float(_require(entry, "y_km", path)),
            capacity_mw=(float(entry["capacity_mw"])
                         if "capacity_mw" in entry else None),
            truth=truth,
        ))

    cons_doc = doc.get("consensus", {})
    consensus = ConsensusConfig(
        eta=cons_doc.get("eta"),
        tol=float(cons_doc.get("tol", 1e-8)),
        max_iter=int(cons_doc.get("max_iter", 20000)),
    )
    fit_doc = doc.get("fit", {})
    fit = FitConfig(
        tol=float(fit_doc.get("tol", 1e-6)),
        max_iter=int(fit_doc.get("max_iter", 500)),
        on_collapse=str(fit_doc.get("on_collapse", "error")),
    )

    csv_dir = None
    data_doc = doc.get("data", {})
    if "csv_dir" in data_doc:
        csv_dir = (path.parent / data_doc["csv_dir"]).resolve()
        if not csv_dir.is_dir():
            raise ValidationError(f"{path}: csv_dir {csv_dir} does not exist")

    cuts = tuple(
        (int(a) - 1, int(b) - 1)
        for a, b in sc.get("link_cuts", [])
    )

    return ScenarioConfig(
        name=str(sc.get("name", path.stem)),
        seed=int(_require(sc, "seed", path)),
        train_samples=int(_require(sc, "train_samples", path)),
        test_samples=int(sc.get("test_samples", 2400)),
        components=int(sc.get("components", 20)),
        key_fraction=float(sc.get("key_fraction", 0.3)),
        threshold_km=float(sc.get("threshold_km", 4.0)),
        farms=tuple(farms),
        consensus=consensus,
        fit=fit,
        csv_dir=csv_dir,
        hyper_overrides={k: v for k, v in doc.get("hyperparams", {}).items()},
        link_cuts=cuts,
    )


def bundled_scenario_path(name="tenfarm"):
    """Path of a scenario shipped with the package."""
    candidate = resources.files("windgmm").joinpath(f"scenarios/{name}.toml")
    if not candidate.is_file():
        raise ValidationError(f"no bundled scenario named {name!r}")
    return Path(str(candidate))


# ---------------------------------------------------------------------------
# Topology files


def save_topology(topology, path):
    """Write a topology TOML: nodes, threshold, virtual node, removed edges.

    Adjacency follows from coordinates and threshold; edges that the
    distance rule implies but the topology lacks (explicit cuts) are
    recorded so that the file round-trips.
    """
    doc = {"threshold_km": topology.threshold_km}
    doc["nodes"] = [
        {"id": m + 1,
         "x_km": float(topology.coordinates[m, 0]),
         "y_km": float(topology.coordinates[m, 1])}
        for m in range(topology.n_real)
    ]
    implied = build_topology(topology.coordinates, topology.threshold_km,
                             allow_disconnected=True)
    removed = sorted(set(implied.real_edges()) - set(topology.real_edges()))
    if removed:
        doc["removed_edges"] = [[a + 1, b + 1] for a, b in removed]
    if topology.has_virtual_node:
        doc["virtual_node"] = {
            "id": topology.n_real + 1,
            "key_nodes": [k + 1 for k in topology.key_nodes],
        }
    Path(path).write_text(toml_writer.dumps(doc), encoding="utf-8")


def load_topology(path):
    """Rebuild a topology from its TOML file."""
    from .evaluation import cut_links
    from .network import attach_virtual_node

    with open(path, "rb") as handle:
        doc = tomli.load(handle)
    nodes = sorted(doc["nodes"], key=lambda n: int(n["id"]))
    ids = [int(n["id"]) for n in nodes]
    if ids != list(range(1, len(ids) + 1)):
        raise ValidationError(f"{path}: node ids must be 1..M, got {ids}")
    coords = [[float(n["x_km"]), float(n["y_km"])] for n in nodes]
    topo = build_topology(coords, float(doc["threshold_km"]))
    removed = [(int(a) - 1, int(b) - 1)
               for a, b in doc.get("removed_edges", [])]
    if removed:
        topo = cut_links(topo, removed)
    if "virtual_node" in doc:
        keys = [int(k) - 1 for k in doc["virtual_node"]["key_nodes"]]
        topo = attach_virtual_node(topo, keys)
    return topo


# ---------------------------------------------------------------------------
# Hyperparameter files


def save_hyperparams(hyper, path):
    """Write hyperparameters as a TOML table mirroring the fields."""
    Path(path).write_text(toml_writer.dumps({"hyperparams": hyper.to_dict()}),
                          encoding="utf-8")


def load_hyperparams(path):
    with open(path, "rb") as handle:
        doc = tomli.load(handle)
    if "hyperparams" not in doc:
        raise ValidationError(f"{path}: missing [hyperparams] table")
    return Hyperparams.from_dict(doc["hyperparams"])
