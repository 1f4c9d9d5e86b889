"""Hyperparameter sweeps and the module ablation"""
import os
import re
import numpy as np
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

from config import (ABLATION_CHECK, ABLATION_COLUMNS, ABLATION_ROWS, METRIC_NAMES, SWEEP_COLUMNS,
                    SWEEP_GRIDS, SWEEP_PARAMS)
from dtsl.data.synthetic import DatasetSplit
from dtsl.settings import CorpusConfig, TrainConfig, TrainMode
from dtsl.systems.consensus import ClgStrategy
from dtsl.trainer import build_corpus, run_training
from dtsl.ui.report import write_csv


def _decimals(text: str) -> int:
    text = text.strip().lower()
    if "e" in text:
        mantissa, _, exponent = text.partition("e")
        return max(_decimals(mantissa) - int(exponent), 0)
    return len(text.split(".", 1)[1]) if "." in text else 0


def parse_range(text: str) -> List[float]:
    """'a..b' steps by the finest decimal place of the endpoints; 'a..b:step' is explicit"""
    body, _, step_text = text.partition(":")
    low_text, _, high_text = body.partition("..")
    low, high = float(low_text), float(high_text)
    if high < low:
        raise ValueError(f"range {text!r} runs backwards")

    places = max(_decimals(low_text), _decimals(high_text))
    if step_text:
        step = float(step_text)
        places = max(places, _decimals(step_text))
        if step <= 0:
            raise ValueError(f"range {text!r} needs a positive step")
    else:
        step = 10.0 ** -places

    count = int(np.floor((high - low) / step + 1e-9)) + 1
    return [round(low + i * step, places) for i in range(count)]


def parse_values(text: str, param: str) -> list:
    """Comma list of values and ranges for one sweep parameter"""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"cannot sweep {param!r}; choose one of {', '.join(SWEEP_PARAMS)}")
    items = [item.strip() for item in (text or "").split(",") if item.strip()]
    if not items:
        raise ValueError("empty value list")

    if param == "strategy":
        return [ClgStrategy.parse(item) for item in items]

    values: List[float] = []
    for item in items:
        if ".." in item:
            values.extend(parse_range(item))
        else:
            values.append(float(item))
    return values


def default_values(param: str, grid: Optional[str] = None) -> list:
    name = grid or param
    if name not in SWEEP_GRIDS:
        raise ValueError(f"no built-in grid named {name!r}")
    values = SWEEP_GRIDS[name]
    return [ClgStrategy.parse(v) for v in values] if param == "strategy" else list(values)


def sweep_grid(base: TrainConfig, param: str, values: Sequence) -> List[TrainConfig]:
    if param not in SWEEP_PARAMS:
        raise ValueError(f"cannot sweep {param!r}; choose one of {', '.join(SWEEP_PARAMS)}")
    if not values:
        raise ValueError("empty value list")
    return [replace(base, **{param: value}).validate() for value in values]


def _sweep_row(index: int, param: str, cfg: TrainConfig) -> Dict:
    row = {"run": index}
    if param:
        value = getattr(cfg, param)
        row["param"] = param
        row["value"] = value.value if isinstance(value, ClgStrategy) else value
    row.update({
        "mode": cfg.mode.value,
        "strategy": cfg.strategy.value,
        "omega": cfg.omega,
        "kappa": cfg.kappa,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "seed": cfg.seed,
    })
    return row


def sweep(cfg_grid: List[TrainConfig], corpus: CorpusConfig, out_dir: Optional[str] = None,
          param: str = "", jobs: int = 1, quiet: bool = False,
          data: Optional[DatasetSplit] = None) -> List[Dict]:
    """One row per configuration, in grid order; failed runs are recorded, not raised"""
    if not cfg_grid:
        raise ValueError("empty sweep grid")
    if len({cfg.num_classes for cfg in cfg_grid}) != 1:
        raise ValueError("every configuration in a sweep must use the same num_classes")
    if data is None:
        data = build_corpus(corpus, cfg_grid[0].num_classes)

    def run_one(index: int, cfg: TrainConfig) -> Dict:
        row = _sweep_row(index, param, cfg)
        run_dir = os.path.join(out_dir, f"run_{index:03d}") if out_dir else None
        try:
            report = run_training(cfg, data, run_dir, corpus, quiet=True)
            row.update(report.headline())
            row["status"] = "ok"
        except Exception as e:
            row["status"] = "failed"
            row["error"] = f"{type(e).__name__}: {e}"
        if not quiet:
            print(f"[sweep] run {index}: {row['status']}" + (f" ({row['error']})" if "error" in row else ""))
        return row

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        rows = list(pool.map(run_one, range(len(cfg_grid)), cfg_grid))

    if out_dir:
        write_csv(os.path.join(out_dir, "sweep.csv"), SWEEP_COLUMNS, rows)
    return rows


def _slug(label: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", label.lower()).strip("_")


def ablation_configs(base: TrainConfig) -> List[Tuple[tuple, TrainConfig]]:
    """(row, config) for every ablation row, built on top of base"""
    configs = []
    for row in ABLATION_ROWS:
        overrides = dict(row[5])
        overrides["mode"] = TrainMode.parse(overrides["mode"])
        configs.append((row, replace(base, **overrides).validate()))
    return configs


def _median(values: List[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return float(np.median(defined)) if defined else None


def run_ablation(base: TrainConfig, corpus: CorpusConfig, seeds: Sequence[int],
                 out_dir: Optional[str] = None, jobs: int = 1, quiet: bool = False) -> List[Dict]:
    """Median headline metrics per ablation row over the seeds; each seed has its own corpus"""
    if not seeds:
        raise ValueError("ablation needs at least one seed")
    configs = ablation_configs(base)
    corpora = {seed: replace(corpus, data_seed=seed) for seed in seeds}
    splits = {seed: build_corpus(c, base.num_classes) for seed, c in corpora.items()}

    tasks = [(r, seed) for r in range(len(configs)) for seed in seeds]

    def run_one(task) -> Tuple[int, int, Optional[Dict], Optional[str]]:
        r, seed = task
        label = configs[r][0][0]
        cfg = replace(configs[r][1], seed=seed)
        run_dir = os.path.join(out_dir, f"{_slug(label)}_seed{seed}") if out_dir else None
        try:
            report = run_training(cfg, splits[seed], run_dir, corpora[seed], quiet=True)
            if not quiet:
                print(f"[ablation] {label}, seed {seed}: ok")
            return r, seed, report.headline(), None
        except Exception as e:
            if not quiet:
                print(f"[ablation] {label}, seed {seed}: failed ({e})")
            return r, seed, None, f"{type(e).__name__}: {e}"

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(run_one, tasks))

    rows = []
    for r, ((label, mt, plain, clg, url, _), _cfg) in enumerate(configs):
        done = [res for res in results if res[0] == r and res[2] is not None]
        row = {"row": label, "MT": mt, "Plain DTSL": plain, "CLG": clg, "URL": url,
               "runs": len(done), "check": ""}
        row["status"] = "ok" if len(done) == len(seeds) else f"failed {len(seeds) - len(done)}/{len(seeds)}"
        for name in METRIC_NAMES:
            row[name] = _median([res[2][name] for res in done])
        rows.append(row)

    subject, reference = ABLATION_CHECK
    by_label = {row["row"]: row for row in rows}
    lhs, rhs = by_label[subject]["dsc"], by_label[reference]["dsc"]
    if lhs is not None and rhs is not None:
        by_label[subject]["check"] = "ok" if lhs >= rhs else f"below {reference}"

    if out_dir:
        write_csv(os.path.join(out_dir, "ablation.csv"), ABLATION_COLUMNS, rows)
    return rows
