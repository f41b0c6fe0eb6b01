"""Seeded reference tables of (parameter, dataset) records.

Record j of a table draws everything it needs from the generator
derived from (master seed, stream, j, attempt); regeneration from the
same coordinates is bit-identical, and distinct streams (train /
validation / calibration / test) are disjoint by construction.
Lotka-Volterra draws that go extinct or blow the event budget are
rejected and redrawn with a fresh attempt index until the requested
number of survivors is collected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import ndio
from ..seeding import derive_rng, derive_uint64
from . import grf, lotka_volterra as lv, ma2

__all__ = ["ReferenceTable", "GenerationBudgetError", "generate_reference_table"]

MODEL_TAGS = ("ma2", "grf", "lv")


class GenerationBudgetError(RuntimeError):
    """A record exhausted its redraw attempts without a surviving draw."""


@dataclass(frozen=True)
class ReferenceTable:
    model: str
    theta: np.ndarray         # (N, D)
    x: np.ndarray             # (N, p) | (N, G, G) | (N, 2, n_obs)
    record_seeds: np.ndarray  # (N,) uint64
    master_seed: int
    stream: int
    options: dict

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    def nn_inputs(self) -> np.ndarray:
        """Datasets reshaped with an explicit channel axis for the network."""
        if self.model == "ma2":
            return self.x[:, None, :]
        if self.model == "grf":
            return self.x[:, None, :, :]
        return self.x.astype(float)

    def to_binary(self, path: str | Path, extra_header: dict | None = None) -> None:
        header = {
            "kind": "reference-table",
            "version": 1,
            "model": self.model,
            "master_seed": self.master_seed,
            "stream": self.stream,
            "options": self.options,
        }
        if extra_header:
            header.update(extra_header)
        ndio.write_arrays(
            path, header, {"theta": self.theta, "x": self.x, "record_seeds": self.record_seeds}
        )

    @staticmethod
    def from_binary(path: str | Path) -> "ReferenceTable":
        header, arrays = ndio.read_arrays(path)
        if header.get("kind") != "reference-table":
            raise ndio.FormatError(f"{path}: not a reference table")
        return ReferenceTable(
            model=header["model"],
            theta=arrays["theta"],
            x=arrays["x"],
            record_seeds=arrays["record_seeds"].astype(np.uint64),
            master_seed=header["master_seed"],
            stream=header["stream"],
            options=header["options"],
        )

    def to_jsonl(self, path: str | Path) -> None:
        """Newline-delimited records {index, theta, x, seed}."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for j in range(self.n):
                rec = {
                    "index": j,
                    "theta": self.theta[j].tolist(),
                    "x": self.x[j].tolist(),
                    "seed": int(self.record_seeds[j]),
                }
                fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")

    @staticmethod
    def from_jsonl(
        path: str | Path, model: str, master_seed: int = 0, stream: int = 0, options=None
    ) -> "ReferenceTable":
        thetas, xs, seeds = [], [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                thetas.append(rec["theta"])
                xs.append(rec["x"])
                seeds.append(rec["seed"])
        x = np.asarray(xs)
        if model == "lv":
            x = x.astype(np.int64)
        return ReferenceTable(
            model=model,
            theta=np.asarray(thetas, dtype=float),
            x=x,
            record_seeds=np.asarray(seeds, dtype=np.uint64),
            master_seed=master_seed,
            stream=stream,
            options=dict(options or {}),
        )


def _ma2_record(rng, options):
    params = ma2.sample_prior(rng)
    x = ma2.simulate(params, options["series_length"], rng)
    return params.as_array(), x


def _grf_record(rng, options):
    theta = grf.sample_prior(rng)
    params = grf.GrfParams(theta, options["grid_size"], options["extent"])
    return np.array([theta]), grf.simulate(params, rng)


DEFAULT_OPTIONS = {
    "ma2": {"series_length": 100},
    "grf": {"grid_size": 32, "extent": 5.0},
    "lv": {
        "method": "tau-leap",
        "tau": lv.DEFAULT_TAU,
        "t_end": lv.T_END,
        "max_events": lv.DEFAULT_MAX_EVENTS,
    },
}


def generate_reference_table(
    model: str,
    n: int,
    master_seed: int,
    stream: int = 0,
    attempt_budget: int = 1000,
    **options,
) -> ReferenceTable:
    """N prior draws with simulated datasets, seeded per record."""
    if model not in MODEL_TAGS:
        raise ValueError(f"unknown model tag {model!r}; choose from {MODEL_TAGS}")
    if n < 1:
        raise ValueError("table size must be at least 1")
    opts = dict(DEFAULT_OPTIONS[model])
    unknown = set(options) - set(opts)
    if unknown:
        raise ValueError(f"unknown {model} options: {sorted(unknown)}")
    opts.update(options)

    thetas, xs, seeds = [], [], []
    for j in range(n):
        if model == "lv":
            theta, x, seed = _lv_survivor(j, master_seed, stream, attempt_budget, opts)
        else:
            seed = derive_uint64(master_seed, stream, j, 0)
            rng = derive_rng(master_seed, stream, j, 0)
            if model == "ma2":
                theta, x = _ma2_record(rng, opts)
            else:
                theta, x = _grf_record(rng, opts)
        thetas.append(theta)
        xs.append(x)
        seeds.append(seed)
    return ReferenceTable(
        model=model,
        theta=np.asarray(thetas, dtype=float),
        x=np.asarray(xs),
        record_seeds=np.asarray(seeds, dtype=np.uint64),
        master_seed=master_seed,
        stream=stream,
        options=opts,
    )


def _lv_survivor(j, master_seed, stream, attempt_budget, opts):
    """Redraw (theta, trajectory) until the trajectory survives the window."""
    for attempt in range(attempt_budget):
        seed = derive_uint64(master_seed, stream, j, attempt)
        rng = derive_rng(master_seed, stream, j, attempt)
        params = lv.sample_prior(rng)
        try:
            result = lv.simulate(
                params,
                rng,
                method=opts["method"],
                max_events=opts["max_events"],
                t_end=opts["t_end"],
                tau=opts["tau"],
            )
        except lv.EventBudgetExceeded:
            continue  # explosive regime, discarded like an extinction
        if isinstance(result, lv.Extinct):
            continue
        return params.as_array(), result.as_array(), seed
    raise GenerationBudgetError(
        f"record {j}: no surviving Lotka-Volterra draw in {attempt_budget} attempts"
    )
