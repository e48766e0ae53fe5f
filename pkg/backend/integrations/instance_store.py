"""
Canonical instance documents and subset-utility files
JSON in, typed market objects out; every structural problem is reported with its document path
"""

import json
import logging
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from backend.errors import InstanceParseError, ShapleyCapacityError
from backend.market import BuyerEdge, DatasetSpec, MarketInstance, ModelSpec, ShapleyTable
from backend.shapley import MAX_GROUND_SET, CoalitionUtility

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _require(doc: Mapping[str, Any], key: str, path: str) -> Any:
    if not isinstance(doc, Mapping):
        raise InstanceParseError(path, "expected an object")
    if key not in doc:
        raise InstanceParseError(f"{path}/{key}", "required field is missing")
    return doc[key]


def _array(value: Any, path: str) -> List[Any]:
    if not isinstance(value, list):
        raise InstanceParseError(path, f"expected an array, got {type(value).__name__}")
    return value


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceParseError(path, f"expected a number, got {value!r}")
    return float(value)


def _string(value: Any, path: str) -> str:
    if not isinstance(value, str) or not value:
        raise InstanceParseError(path, f"expected a non-empty string, got {value!r}")
    return value


def parse_instance(doc: Any, instance_id: str = "instance") -> MarketInstance:
    """
    Build a MarketInstance from a decoded canonical document.
    Only structure is checked here; market invariants belong to market.validate.
    """
    if not isinstance(doc, Mapping):
        raise InstanceParseError("/", "document must be an object")

    datasets = []
    for i, entry in enumerate(_array(_require(doc, "datasets", ""), "/datasets")):
        path = f"/datasets/{i}"
        datasets.append(DatasetSpec(
            id=_string(_require(entry, "id", path), f"{path}/id"),
            kappa_d=_number(_require(entry, "kappa_d", path), f"{path}/kappa_d"),
        ))

    models = []
    for j, entry in enumerate(_array(_require(doc, "models", ""), "/models")):
        path = f"/models/{j}"
        dataset_ids = tuple(
            _string(d, f"{path}/datasets/{n}")
            for n, d in enumerate(_array(_require(entry, "datasets", path), f"{path}/datasets"))
        )
        buyers = []
        for k, b in enumerate(_array(_require(entry, "buyers", path), f"{path}/buyers")):
            bpath = f"{path}/buyers/{k}"
            buyers.append(BuyerEdge(
                buyer_id=_string(_require(b, "id", bpath), f"{bpath}/id"),
                omega=_number(_require(b, "omega", bpath), f"{bpath}/omega"),
                reserve=_number(_require(b, "reserve", bpath), f"{bpath}/reserve"),
            ))
        models.append(ModelSpec(
            id=_string(_require(entry, "id", path), f"{path}/id"),
            kappa_m=_number(_require(entry, "kappa_m", path), f"{path}/kappa_m"),
            delta=_number(_require(entry, "delta", path), f"{path}/delta"),
            dataset_ids=dataset_ids,
            buyers=tuple(buyers),
        ))

    caps = {}
    for n, entry in enumerate(_array(doc.get("caps", []), "/caps")):
        path = f"/caps/{n}"
        key = (_string(_require(entry, "dataset", path), f"{path}/dataset"),
               _string(_require(entry, "model", path), f"{path}/model"))
        if key in caps:
            raise InstanceParseError(path, f"duplicate cap for edge {key}")
        caps[key] = _number(_require(entry, "cap", path), f"{path}/cap")

    shares = {}
    for n, entry in enumerate(_array(_require(doc, "shapley", ""), "/shapley")):
        path = f"/shapley/{n}"
        model_id = _string(_require(entry, "model", path), f"{path}/model")
        column = _require(entry, "shares", path)
        if not isinstance(column, Mapping):
            raise InstanceParseError(f"{path}/shares", "expected an object of dataset shares")
        if model_id in shares:
            raise InstanceParseError(path, f"duplicate Shapley column for model {model_id}")
        shares[model_id] = {d: _number(v, f"{path}/shares/{d}") for d, v in column.items()}

    return MarketInstance(
        datasets=tuple(datasets),
        models=tuple(models),
        shapley=ShapleyTable(shares),
        caps=caps,
        instance_id=instance_id,
    )


def instance_to_document(instance: MarketInstance) -> Dict[str, Any]:
    """Convert to the canonical document structure"""
    return {
        "datasets": [{"id": d.id, "kappa_d": float(d.kappa_d)} for d in instance.datasets],
        "models": [
            {
                "id": m.id,
                "kappa_m": float(m.kappa_m),
                "delta": float(m.delta),
                "datasets": list(m.dataset_ids),
                "buyers": [
                    {"id": b.buyer_id, "omega": float(b.omega), "reserve": float(b.reserve)}
                    for b in m.buyers
                ],
            }
            for m in instance.models
        ],
        "caps": [
            {"dataset": d, "model": m, "cap": float(cap)}
            for (d, m), cap in instance.caps.items()
        ],
        "shapley": [
            {"model": model_id, "shares": {d: float(v) for d, v in column.items()}}
            for model_id, column in instance.shapley.shares.items()
        ],
    }


def dumps_instance(instance: MarketInstance) -> str:
    return json.dumps(instance_to_document(instance), sort_keys=True, indent=2) + "\n"


def loads_instance(text: str, instance_id: str = "instance") -> MarketInstance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InstanceParseError("/", f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    return parse_instance(doc, instance_id=instance_id)


def load_instance(path: PathLike) -> MarketInstance:
    """Read an instance document; the file stem becomes the instance id"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InstanceParseError("/", f"cannot read {path}: {e.strerror}") from e
    instance = loads_instance(text, instance_id=path.stem)
    logger.debug(f"Loaded instance {instance.instance_id} from {path}")
    return instance


def save_instance(instance: MarketInstance, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_instance(instance), encoding="utf-8")
    logger.info(f"Saved instance {instance.instance_id} to {path}")
    return path


def parse_subset_utilities(doc: Any,
                           instance: Optional[MarketInstance] = None) -> Dict[str, CoalitionUtility]:
    """
    Build one CoalitionUtility per model from {model, subset, utility} entries.
    The ground set is the model's datasets when an instance is given, otherwise
    the union of datasets named in that model's subsets. All 2^n subsets must appear.
    """
    entries = doc.get("utilities") if isinstance(doc, Mapping) else doc
    entries = _array(entries, "/utilities" if isinstance(doc, Mapping) else "/")
    root = "/utilities" if isinstance(doc, Mapping) else ""

    tables: Dict[str, Dict[frozenset, float]] = {}
    members: Dict[str, set] = {}
    for n, entry in enumerate(entries):
        path = f"{root}/{n}"
        model_id = _string(_require(entry, "model", path), f"{path}/model")
        subset_raw = _array(_require(entry, "subset", path), f"{path}/subset")
        subset = frozenset(_string(d, f"{path}/subset/{s}") for s, d in enumerate(subset_raw))
        if len(subset) != len(subset_raw):
            raise InstanceParseError(f"{path}/subset", "subset lists a dataset twice")
        value = _number(_require(entry, "utility", path), f"{path}/utility")
        table = tables.setdefault(model_id, {})
        if subset in table:
            raise InstanceParseError(path, f"subset {sorted(subset)} given twice for model {model_id}")
        table[subset] = value
        members.setdefault(model_id, set()).update(subset)

    utilities = {}
    for model_id, table in tables.items():
        if instance is not None:
            try:
                ground_set = instance.model(model_id).dataset_ids
            except KeyError:
                raise InstanceParseError(root or "/", f"model {model_id} is not in the instance") from None
        else:
            ground_set = tuple(sorted(members[model_id]))
        stray = members[model_id] - set(ground_set)
        if stray:
            raise InstanceParseError(root or "/", f"model {model_id} subsets name unknown datasets {sorted(stray)}")
        if len(ground_set) > MAX_GROUND_SET:
            raise ShapleyCapacityError(
                f"Model {model_id} has {len(ground_set)} datasets; exact enumeration is limited to {MAX_GROUND_SET}"
            )
        expected = 1 << len(ground_set)
        if len(table) != expected:
            first_missing = next(
                sorted(c) for r in range(len(ground_set) + 1)
                for c in combinations(ground_set, r) if frozenset(c) not in table
            )
            raise InstanceParseError(
                root or "/",
                f"model {model_id} covers {len(table)} of {expected} subsets; first missing {first_missing}",
            )
        utilities[model_id] = CoalitionUtility.from_table(ground_set, table)
    return utilities


def load_subset_utilities(path: PathLike,
                          instance: Optional[MarketInstance] = None) -> Dict[str, CoalitionUtility]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise InstanceParseError("/", f"cannot read {path}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise InstanceParseError("/", f"invalid JSON at line {e.lineno}: {e.msg}") from e
    return parse_subset_utilities(doc, instance=instance)
