"""Mechanism x epsilon x seed grids of train-on-noisy-labels runs."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..analysis import noisy_label_loss
from ..core import LossKind, Prior, RandomSource
from ..errors import LabelDPError, ParameterError
from ..pipeline import MECHANISM_NAMES, make_mechanism
from .data import SyntheticSpec, generate_synthetic
from .models import MODEL_KINDS, make_model
from .train import SGDConfig, train_sgd

log = logging.getLogger(__name__)

NON_PRIVATE = "none"
CSV_COLUMNS = ("mechanism", "epsilon", "seed", "noisy_label_loss", "test_loss", "blowup_flag")
_MECH_PARAMS = {"grid_size", "prior_epsilon", "support", "backend"}


@dataclass(frozen=True)
class MechanismSpec:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name != NON_PRIVATE and self.name not in MECHANISM_NAMES:
            raise ParameterError(f"unknown mechanism {self.name!r}")
        unknown = set(self.params) - _MECH_PARAMS
        if unknown:
            raise ParameterError(f"unknown mechanism params {sorted(unknown)}")

    @classmethod
    def parse(cls, item) -> "MechanismSpec":
        if isinstance(item, str):
            return cls(item)
        if isinstance(item, dict) and "name" in item:
            return cls(item["name"], dict(item.get("params", {})))
        raise ParameterError(f"bad mechanism entry {item!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    mechanisms: tuple
    epsilons: tuple
    seeds: tuple
    data: SyntheticSpec
    sgd: SGDConfig
    model: str = "linear"
    hidden: int = 16

    def __post_init__(self):
        object.__setattr__(self, "mechanisms", tuple(MechanismSpec.parse(m) for m in self.mechanisms))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.mechanisms or not self.epsilons or not self.seeds:
            raise ParameterError("mechanisms, epsilons and seeds must be non-empty")
        if any(not e > 0 for e in self.epsilons):
            raise ParameterError("epsilons must be positive")
        if self.model not in MODEL_KINDS:
            raise ParameterError(f"model must be one of {MODEL_KINDS}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            model = raw.get("model", "linear")
            hidden = 16
            if isinstance(model, dict):
                hidden = int(model.get("hidden", 16))
                model = model.get("kind", "linear")
            return cls(raw["mechanisms"], raw["epsilons"], raw["seeds"],
                       SyntheticSpec.from_dict(raw["data"]), SGDConfig.from_dict(raw["sgd"]),
                       model, hidden)
        except KeyError as exc:
            raise ParameterError(f"experiment config is missing {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParameterError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(raw)


@dataclass(frozen=True)
class CellResult:
    mechanism: str
    epsilon: float
    seed: int
    noisy_label_loss: float
    test_loss: float
    blowup_flag: bool
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _noisy_loss(choice, y, noisy, label_set, loss: LossKind) -> float:
    """Exact for finite randomizers (against the training-label histogram), realised otherwise."""
    matrix = choice.matrix if choice is not None else None
    try:
        if matrix is not None:
            counts = np.bincount(label_set.indices(y), minlength=len(label_set))
            return noisy_label_loss(matrix, Prior.from_weights(label_set, counts), loss)
        return float(np.mean(loss.value_of(noisy, y)))
    except LabelDPError:
        return math.nan


def run_cell(config: ExperimentConfig, mech: MechanismSpec, epsilon: float, seed: int) -> CellResult:
    """One full pipeline: data, privatize the training labels, train, test on clean labels."""
    data_rng, mech_rng, train_rng = RandomSource(seed).spawn(3)
    loss = config.sgd.loss
    try:
        ds = generate_synthetic(config.data, data_rng)
        if mech.name == NON_PRIVATE:
            choice, noisy = None, ds.y_train.copy()
        else:
            build_rng, sample_rng = mech_rng.spawn(2)
            choice = make_mechanism(mech.name, ds.label_set, epsilon, build_rng,
                                    labels=ds.y_train, **mech.params)
            noisy = choice.mechanism.privatize(ds.y_train, sample_rng)
        nll = _noisy_loss(choice, ds.y_train, noisy, ds.label_set, loss)
        model = make_model(config.model, config.data.feature_count, loss, config.hidden)
        result = train_sgd((ds.X_train, noisy), model, config.sgd, train_rng)
        with np.errstate(all="ignore"):
            pred = model.predict(result.theta, ds.X_test)
            test = float(np.mean(loss.value_of(pred, ds.y_test)))
        return CellResult(mech.name, epsilon, seed, nll, test, result.blowup)
    except (LabelDPError, FloatingPointError, ValueError) as exc:
        log.error("cell %s eps=%g seed=%d failed: %s", mech.name, epsilon, seed, exc)
        return CellResult(mech.name, epsilon, seed, math.nan, math.nan, False,
                          f"{type(exc).__name__}: {exc}")


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    cells: tuple

    def summary(self) -> list[dict]:
        """Mean and sample std per (mechanism, epsilon) over the successful seeds."""
        groups: dict = {}
        for cell in self.cells:
            groups.setdefault((cell.mechanism, cell.epsilon), []).append(cell)
        out = []
        for (name, eps), cells in groups.items():
            ok = [c for c in cells if c.ok]
            row = {"mechanism": name, "epsilon": eps, "runs": len(cells), "failures": len(cells) - len(ok),
                   "blowups": sum(c.blowup_flag for c in ok)}
            for key in ("noisy_label_loss", "test_loss"):
                vals = np.array([getattr(c, key) for c in ok], dtype=np.float64)
                vals = vals[np.isfinite(vals)]
                row[f"{key}_mean"] = float(vals.mean()) if vals.size else None
                row[f"{key}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else None
            row["errors"] = [c.error for c in cells if not c.ok]
            out.append(row)
        return out

    def mean(self, mechanism: str, epsilon: float, key: str = "test_loss") -> float:
        for row in self.summary():
            if row["mechanism"] == mechanism and row["epsilon"] == float(epsilon):
                value = row[f"{key}_mean"]
                return math.nan if value is None else value
        raise KeyError((mechanism, epsilon))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for c in self.cells:
            writer.writerow([c.mechanism, repr(c.epsilon), c.seed, repr(c.noisy_label_loss),
                             repr(c.test_loss), int(c.blowup_flag)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary()}, indent=2, sort_keys=True) + "\n"

    def save(self, csv_path, json_path=None) -> None:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())
        if json_path is not None:
            with open(json_path, "w", encoding="utf-8") as fh:
                fh.write(self.to_json())


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Every (mechanism, epsilon, seed) cell; failed cells are recorded, not raised.

    Cells are independent and seeded only by their seed, so the report does
    not depend on ``workers``.
    """
    jobs = [(config, m, eps, seed) for m in config.mechanisms for eps in config.epsilons
            for seed in config.seeds]
    if workers <= 1 or len(jobs) == 1:
        cells = [run_cell(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(lambda job: run_cell(*job), jobs))
    return ExperimentReport(tuple(cells))


__all__ = ["MechanismSpec", "ExperimentConfig", "CellResult", "ExperimentReport", "run_cell",
           "run_experiment", "NON_PRIVATE", "CSV_COLUMNS"]
