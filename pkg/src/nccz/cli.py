"""Batch driver: key=value configs, experiment dispatch, JSON/CSV/summary reports.

Config text is UTF-8, one ``key=value`` per line, ``#`` comments, dotted keys
for sections (``grid.d=3``). The short aliases d, K, n, pad and samples map to
their grid/ensemble keys. ``auto`` leaves an optional integer unset.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .experiments import CATALOG, OPERATOR_KINDS, aggregate, run_sample
from .probes import map_samples
from .records import FAIL, MEASURED, PASS, CheckRecord

FORMAT_VERSION = 1
FORMATS = ("json", "csv", "summary")
ALIASES = {"d": "grid.d", "K": "grid.K", "n": "grid.n", "pad": "grid.pad", "samples": "ensemble.samples"}


@dataclass(frozen=True)
class GridCfg:
    n: int = 1
    K: int = 4
    d: int = 2
    pad: int = 0


@dataclass(frozen=True)
class EnsembleCfg:
    samples: int = 20
    spikes: int = 1
    spike_scale: float = 20.0
    scale: float = 1.0


@dataclass(frozen=True)
class LacunaryCfg:
    s_min: int = -2
    s_max: int | None = None


@dataclass(frozen=True)
class LamCfg:
    ell_min: int | None = None
    ell_max: int | None = None


@dataclass(frozen=True)
class OperatorCfg:
    kind: str = "auto"
    r: int = 0
    s: int = 1
    side: str = "column"
    path: str = ""


@dataclass(frozen=True)
class TolCfg:
    identity: float = 1e-8
    exact: float = 1e-10
    dual: float = 1e-10
    slack: float = 1e-9


@dataclass(frozen=True)
class ProbeCfg:
    ceiling: float = 100.0
    ledger: str = ""


@dataclass(frozen=True)
class Config:
    experiment: str
    seed: int = 0
    out: str = ""
    format: str = "json"
    jobs: int = 1
    grid: GridCfg = field(default_factory=GridCfg)
    ensemble: EnsembleCfg = field(default_factory=EnsembleCfg)
    lacunary: LacunaryCfg = field(default_factory=LacunaryCfg)
    lam: LamCfg = field(default_factory=LamCfg)
    operator: OperatorCfg = field(default_factory=OperatorCfg)
    tol: TolCfg = field(default_factory=TolCfg)
    probe: ProbeCfg = field(default_factory=ProbeCfg)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class ConfigError(ValueError):
    pass


def _flat_fields(cls, prefix: str = "") -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    out = {}
    for f in dataclasses.fields(cls):
        t = hints[f.name]
        if dataclasses.is_dataclass(t):
            out.update(_flat_fields(t, prefix + f.name + "."))
        else:
            out[prefix + f.name] = t
    return out


KEYS = _flat_fields(Config)


def _convert(key: str, raw: str, t):
    raw = raw.strip()
    optional = typing.get_origin(t) in (typing.Union, getattr(__import__("types"), "UnionType", None))
    if optional:
        if raw == "auto":
            return None
        t = next(a for a in typing.get_args(t) if a is not type(None))
    try:
        if t is int:
            return int(raw)
        if t is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {t.__name__}") from None
    return raw


def config_from_pairs(pairs: dict[str, str]) -> Config:
    values: dict[str, object] = {}
    for key, raw in pairs.items():
        key = ALIASES.get(key, key)
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}; valid keys: {', '.join(sorted(KEYS))}")
        values[key] = _convert(key, raw, KEYS[key])
    if "experiment" not in values:
        raise ConfigError("missing required key 'experiment'")
    top = {k: v for k, v in values.items() if "." not in k}
    sections = {}
    for f in dataclasses.fields(Config):
        sub = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(f.name + ".")}
        if sub:
            sections[f.name] = typing.get_type_hints(Config)[f.name](**sub)
    cfg = Config(**top, **sections)
    validate(cfg)
    return cfg


def parse_config(text: str) -> Config:
    pairs: dict[str, str] = {}
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        pairs[key.strip()] = val.strip()
    return config_from_pairs(pairs)


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def canonical(cfg: Config) -> str:
    """Sorted key=value form; parse_config(canonical(cfg)) == cfg."""
    flat = {}

    def walk(obj, prefix=""):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if dataclasses.is_dataclass(v):
                walk(v, prefix + f.name + ".")
            else:
                flat[prefix + f.name] = v

    walk(cfg)
    return "".join(f"{k}={_fmt(flat[k])}\n" for k in sorted(flat))


def validate(cfg: Config):
    def need(ok: bool, msg: str):
        if not ok:
            raise ConfigError(msg)

    need(cfg.experiment in CATALOG,
         f"unknown experiment {cfg.experiment!r}; valid: {', '.join(CATALOG)}")
    g = cfg.grid
    need(g.n in (1, 2), f"grid.n must be 1 or 2, got {g.n}")
    need(1 <= g.K <= 8, f"grid.K must lie in 1..8, got {g.K}")
    need(g.n * g.K <= 10, f"grid has 2^{g.n * g.K} leaves; keep n*K <= 10")
    need(1 <= g.d <= 8, f"grid.d must lie in 1..8, got {g.d}")
    need(0 <= g.pad <= g.K, f"grid.pad must lie in 0..K, got {g.pad}")
    e = cfg.ensemble
    need(e.samples >= 1, "ensemble.samples must be >= 1")
    need(e.spikes >= 0, "ensemble.spikes must be >= 0")
    need(e.scale > 0 and e.spike_scale >= 0, "ensemble scales must be positive")
    lc = cfg.lacunary
    need(lc.s_max is None or lc.s_min < lc.s_max, "lacunary.s_min must be < lacunary.s_max")
    lm = cfg.lam
    need(lm.ell_min is None or lm.ell_max is None or lm.ell_min <= lm.ell_max, "lam.ell_min must be <= lam.ell_max")
    o = cfg.operator
    need(o.kind in OPERATOR_KINDS, f"operator.kind {o.kind!r} not in {', '.join(OPERATOR_KINDS)}")
    need(o.side in ("column", "row"), f"operator.side must be column or row, got {o.side!r}")
    need(o.r >= 0 and o.s >= 0, "operator complexities r, s must be >= 0")
    need(max(o.r, o.s) < g.K, f"operator complexity max(r, s) must be < K = {g.K}")
    need(o.kind != "file" or bool(o.path), "operator.kind=file needs operator.path")
    need(o.kind != "hilbert" or g.n == 1, "the dyadic Hilbert transform needs n = 1")
    need(all(v > 0 for v in dataclasses.asdict(cfg.tol).values()), "tolerances must be positive")
    need(cfg.probe.ceiling > 0, "probe.ceiling must be positive")
    need(cfg.format in FORMATS, f"format must be one of {FORMATS}")
    need(cfg.jobs >= 1, "jobs must be >= 1")


# ---------------------------------------------------------------------------
# results and reports


@dataclass
class ExperimentResult:
    config: Config
    records: list[CheckRecord]
    timing: float = 0.0
    version: str = __version__

    @property
    def failures(self) -> int:
        return sum(r.status == FAIL for r in self.records)

    @property
    def exit_code(self) -> int:
        return 0 if self.failures == 0 else 1

    def to_json_dict(self) -> dict:
        # timing is left out so that reports are bit-identical under a fixed seed
        return {"format_version": FORMAT_VERSION, "version": self.version, "experiment": self.config.experiment,
                "config": self.config.to_dict(), "failures": self.failures,
                "records": [r.to_dict() for r in self.records]}


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["format_version", "version", "experiment", "config", "failures", "records"],
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "version": {"type": "string"},
        "experiment": {"type": "string"},
        "config": {"type": "object"},
        "failures": {"type": "integer", "minimum": 0},
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "anchor", "value", "bound", "status", "detail"],
                "properties": {
                    "name": {"type": "string"},
                    "anchor": {"type": "string"},
                    "value": {"type": ["number", "string"]},
                    "bound": {"type": ["number", "string", "null"]},
                    "status": {"enum": [PASS, FAIL, MEASURED]},
                    "detail": {"type": "object"},
                },
            },
        },
    },
}


def run_experiment(cfg: Config) -> ExperimentResult:
    validate(cfg)
    t0 = time.perf_counter()
    jobs = [(cfg, i) for i in range(cfg.ensemble.samples)]
    rows = [r for chunk in map_samples(run_sample, jobs, cfg.jobs) for r in chunk]
    records = aggregate(rows)
    if cfg.experiment == "truncation_probe" and cfg.probe.ledger:
        _write_ledger(cfg)
    return ExperimentResult(cfg, records, time.perf_counter() - t0)


def _write_ledger(cfg: Config):
    """Rebuild the truncation samples in order and log every new running maximum."""
    from .experiments import ensemble, truncation_samples
    from .probes import truncation_probe

    ens = ensemble(cfg)
    samples = []
    for i in range(cfg.ensemble.samples):
        rng = ens.rng(i)
        f = ens.positive(rng)
        samples.extend(truncation_samples(cfg, f, rng))
    truncation_probe(samples, cfg.probe.ledger)


def render(result: ExperimentResult, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(result.to_json_dict(), indent=1, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["experiment", "name", "anchor", "value", "bound", "status"])
        for r in result.records:
            d = r.to_dict()
            w.writerow([result.config.experiment, d["name"], d["anchor"], d["value"],
                        "" if d["bound"] is None else d["bound"], d["status"]])
        return buf.getvalue()
    if fmt == "summary":
        lines = [f"{result.config.experiment}  samples={result.config.ensemble.samples}  "
                 f"failures={result.failures}  time={result.timing:.2f}s",
                 f"{'check':<44} {'value':>12} {'bound':>12}  status"]
        for r in result.records:
            b = "-" if r.bound is None else f"{r.bound:12.4e}"
            lines.append(f"{r.name[:44]:<44} {r.value:12.4e} {b:>12}  {r.status}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}; choose from {FORMATS}")


def emit_report(result: ExperimentResult, fmt: str, path: str | Path | None = None) -> str:
    text = render(result, fmt)
    if path:
        p = Path(path)
        if p.parent and not p.parent.exists():
            raise OSError(f"cannot write report: directory {p.parent} does not exist")
        p.write_text(text)
    return text


def validate_report(doc: dict):
    import jsonschema

    jsonschema.validate(doc, REPORT_SCHEMA)


def records_from_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nccz", description="Run a named experiment over a random ensemble.")
    ap.add_argument("--config", help="key=value config file")
    ap.add_argument("--experiment", choices=sorted(CATALOG), help="overrides the config")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="report path (stdout when omitted)")
    ap.add_argument("--format", choices=FORMATS)
    ap.add_argument("--jobs", type=int, help="worker processes for the sample loop")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="extra config entries")
    ap.add_argument("--list", action="store_true", help="list experiments and exit")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.list:
        print("\n".join(CATALOG))
        return 0
    pairs: dict[str, str] = {}
    try:
        if args.config:
            for line in Path(args.config).read_text(encoding="utf-8").splitlines():
                line = line.split("#", 1)[0].strip()
                if line:
                    if "=" not in line:
                        raise ConfigError(f"expected key=value, got {line!r}")
                    k, _, v = line.partition("=")
                    pairs[k.strip()] = v.strip()
        for item in args.set:
            k, sep, v = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            pairs[k.strip()] = v.strip()
        for key in ("experiment", "seed", "out", "format", "jobs"):
            val = getattr(args, key)
            if val is not None:
                pairs[key] = str(val)
        cfg = config_from_pairs(pairs)
    except (ConfigError, OSError) as exc:
        print(f"nccz: {exc}", file=sys.stderr)
        return 2
    result = run_experiment(cfg)
    try:
        text = emit_report(result, cfg.format, cfg.out or None)
    except OSError as exc:
        print(f"nccz: {exc}", file=sys.stderr)
        return 2
    if not cfg.out:
        sys.stdout.write(text)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
