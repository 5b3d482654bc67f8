"""Experiment configurations, sweeps and report rendering."""

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from fedsense import ensembles, federation, metrics, taskgen
from fedsense.ensembles import EnsembleSpec, adaboost_spec, gboost_spec
from fedsense.errors import ConfigurationError, FedsenseError, ParseError
from fedsense.federation import DeviceState, FederationConfig, LossParams
from fedsense.metrics import REPORT_COLUMNS, MetricsReport

log = logging.getLogger(__name__)

DATASETS = ("DT_0", "DT_1", "DT_2")
BUILTINS = ("centralized", "model1", "model2")
DEFAULT_SEED = 42

# published reference numbers of the deep-belief-network detector; never computed here
DBN_REFERENCE = MetricsReport(
    precision=0.9420, recall=0.9230, f1=0.9280, g_mean=0.8697, accuracy=0.9230
)
DBN_LABEL = "DBN (external baseline, reference values)"


class ExperimentError(FedsenseError):
    """A failure inside one experiment cell; the message names the cell."""


@dataclass(frozen=True)
class DeviceConfig:
    spec: EnsembleSpec
    dataset: str = "DT_0"

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigurationError(f"unknown dataset assignment {self.dataset!r}")


@dataclass
class ExperimentConfig:
    name: str
    devices: list
    # None means aggregation disabled: each device is scored on its own
    federation: FederationConfig | None
    gen: taskgen.GenSpec = field(default_factory=taskgen.GenSpec)
    dataset_csv: str | None = None
    train_n: int = 800
    split_seed: int = DEFAULT_SEED
    modes: tuple = federation.MODES
    ratios: tuple = (0.5, 1.0, 2.0)
    output_dir: str | None = None

    def validate(self):
        if not self.devices:
            raise ConfigurationError("experiment has no devices")
        if self.federation is not None:
            if self.federation.k != len(self.devices):
                raise ConfigurationError(
                    f"federation expects k={self.federation.k} devices, config lists {len(self.devices)}"
                )
            for m in self.modes:
                if m not in federation.MODES:
                    raise ConfigurationError(f"unknown mode {m!r}")
            if not self.ratios:
                raise ConfigurationError("empty loss-ratio sweep")
            for r in self.ratios:
                if not r > 0:
                    raise ConfigurationError(f"loss ratio must be positive, got {r}")
        return self

    @property
    def centralized(self):
        return self.federation is None


def _model1_devices(seed):
    return [
        DeviceConfig(EnsembleSpec("bagging", "gboost", 100, rng_seed=seed + 1), "DT_0"),
        DeviceConfig(adaboost_spec(50, rng_seed=seed + 2), "DT_0"),
        DeviceConfig(EnsembleSpec("bagging", "tree_classifier", 100, rng_seed=seed + 3), "DT_0"),
        DeviceConfig(EnsembleSpec("bagging", "random_forest", 100, rng_seed=seed + 4), "DT_0"),
        DeviceConfig(gboost_spec(50, rng_seed=seed + 5), "DT_0"),
    ]


def _model2_devices(seed):
    return [
        DeviceConfig(adaboost_spec(100, rng_seed=seed + 1), "DT_1"),
        DeviceConfig(EnsembleSpec("bagging", "tree_classifier", 50, rng_seed=seed + 2), "DT_1"),
        DeviceConfig(EnsembleSpec("bagging", "tree_classifier", 100, rng_seed=seed + 3), "DT_2"),
        DeviceConfig(gboost_spec(100, rng_seed=seed + 4), "DT_1"),
        DeviceConfig(gboost_spec(50, rng_seed=seed + 5), "DT_2"),
    ]


def builtin_config(name, seed=DEFAULT_SEED):
    """One of the three built-in configurations, fully determined by ``seed``."""
    if name not in BUILTINS:
        raise ConfigurationError(f"unknown config {name!r}; choose from {', '.join(BUILTINS)}")
    gen = taskgen.GenSpec(rng_seed=seed)
    if name == "model2":
        devices = _model2_devices(seed)
    else:
        devices = _model1_devices(seed)
    fed = None if name == "centralized" else FederationConfig(k=len(devices))
    return ExperimentConfig(name, devices, fed, gen=gen, split_seed=seed)


def reseed(cfg, seed):
    """Copy of ``cfg`` with data, split and device seeds derived from ``seed``."""
    devices = [
        replace(dc, spec=replace(dc.spec, rng_seed=seed + j + 1))
        for j, dc in enumerate(cfg.devices)
    ]
    return replace(cfg, devices=devices, gen=replace(cfg.gen, rng_seed=seed), split_seed=seed)


@dataclass
class Prepared:
    """Datasets and trained devices of one configuration."""

    full: taskgen.Dataset
    train: taskgen.Dataset
    test: taskgen.Dataset
    halves: tuple
    devices: list

    def dataset(self, name):
        return {"DT_0": self.train, "DT_1": self.halves[0], "DT_2": self.halves[1]}[name]


def prepare(cfg):
    """Generate or load data, split it and train every device."""
    cfg.validate()
    if cfg.dataset_csv:
        full = taskgen.load_csv(cfg.dataset_csv)
    else:
        full = taskgen.generate(cfg.gen)
    train, test = taskgen.split(full, cfg.train_n, cfg.split_seed)
    halves = taskgen.halve_training(train, cfg.split_seed + 1)
    prep = Prepared(full, train, test, halves, [])
    for j, dc in enumerate(cfg.devices):
        cell = f"device {j + 1} ({dc.spec.label} on {dc.dataset})"
        try:
            model = ensembles.train(dc.spec, prep.dataset(dc.dataset))
        except FedsenseError as e:
            raise ExperimentError(f"{cell}: {e}") from e
        log.info("trained %s", cell)
        prep.devices.append(DeviceState(j + 1, model))
    return prep


def cell_label(mode, ratio):
    return f"l1/l2={ratio:g} {mode}"


def evaluate(cfg, prep):
    """Score a prepared configuration.

    Returns ``(rows, outcomes)``: rows are ``(label, MetricsReport)`` pairs
    and ``outcomes`` maps each federated cell label to its outcome list.
    """
    test = prep.test
    rows, outcomes = [], {}
    if cfg.centralized:
        for dev in prep.devices:
            preds = ensembles.predict_batch(dev.model, test)
            rows.append((f"device {dev.device_id}", metrics.score(preds, test.labels)))
        return rows, outcomes
    for mode in cfg.modes:
        for ratio in cfg.ratios:
            label = cell_label(mode, ratio)
            try:
                fc = replace(cfg.federation, mode=mode, loss=LossParams.from_ratio(ratio))
                out = federation.run_stream(prep.devices, test, fc)
                rep = metrics.score_with_loss(out, test.labels, fc.k)
            except FedsenseError as e:
                raise ExperimentError(f"cell {label}: {e}") from e
            rows.append((label, rep))
            outcomes[label] = out
    return rows, outcomes


def _slug(label):
    return label.replace("l1/l2=", "r").replace(" ", "_").replace("/", "_")


def run_experiment(cfg):
    """Run ``cfg`` end to end; write artifacts when ``cfg.output_dir`` is set."""
    prep = prepare(cfg)
    rows, outcomes = evaluate(cfg, prep)
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        (out / "data").mkdir(parents=True, exist_ok=True)
        (out / "models").mkdir(exist_ok=True)
        taskgen.save_csv(prep.full, out / "data" / "tasks.csv")
        taskgen.save_csv(prep.train, out / "data" / "DT_0.csv")
        taskgen.save_csv(prep.halves[0], out / "data" / "DT_1.csv")
        taskgen.save_csv(prep.halves[1], out / "data" / "DT_2.csv")
        taskgen.save_csv(prep.test, out / "data" / "test.csv")
        for dev in prep.devices:
            ensembles.save_model(dev.model, out / "models" / f"device_{dev.device_id}.json")
        if outcomes:
            (out / "outcomes").mkdir(exist_ok=True)
            for label, o in outcomes.items():
                federation.save_outcomes(o, out / "outcomes" / f"{_slug(label)}.csv")
        reference = [(DBN_LABEL, DBN_REFERENCE)] if cfg.centralized else []
        render_report(rows, out, with_loss=not cfg.centralized, reference=reference)
    return rows


MD_HEADERS = ("Precision", "Recall", "F1", "G-mean", "Accuracy", "Loss")


def _fmt(v):
    return f"{v:.4f}"


def render_report(reports, out_dir, formats=("csv", "markdown"), with_loss=True,
                  reference=(), stem="report"):
    """Write report tables plus a plot-data file; returns the written paths.

    Every number is formatted once, so the csv and markdown files carry the
    same strings.
    """
    reports = list(reports)
    if not reports:
        raise ConfigurationError("no reports to render")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_rows = reports + list(reference)
    cells = [(label, [_fmt(v) for v in rep.row()]) for label, rep in all_rows]
    written = []
    if "csv" in formats:
        path = out_dir / f"{stem}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("label",) + REPORT_COLUMNS)
            for label, vals in cells:
                w.writerow([label] + vals)
        written.append(path)
    if "markdown" in formats:
        first = "Config" if with_loss else "Device"
        heads = MD_HEADERS if with_loss else MD_HEADERS[:-1]
        lines = [
            "| " + " | ".join((first,) + heads) + " |",
            "|" + "---|" * (len(heads) + 1),
        ]
        for label, vals in cells:
            shown = vals[: len(heads)]
            lines.append("| " + " | ".join([label] + shown) + " |")
        path = out_dir / f"{stem}.md"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    path = out_dir / "plot_data.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("label", "accuracy", "g_mean", "avg_expected_loss", "avg_realized_loss"))
        for label, rep in reports:
            w.writerow([label] + [_fmt(v) for v in (rep.accuracy, rep.g_mean,
                                                    rep.avg_expected_loss, rep.avg_realized_loss)])
    written.append(path)
    return written


# ---------------------------------------------------------------------------
# flat key = value config files

_SCALAR_KEYS = {
    "base", "seed", "n_tasks", "fake_fraction", "dataset_csv", "train_n",
    "split_seed", "modes", "ratios", "alpha", "epsilon", "aggregation",
    "grid_rows", "grid_cols", "output_dir",
}


def _parse_device(value, line, seed, idx):
    parts = value.split()
    if len(parts) < 4:
        raise ParseError("device needs: kind base n_estimators dataset [key=value ...]", line)
    kind, base, n, dataset = parts[:4]
    opts = {}
    for p in parts[4:]:
        k, sep, v = p.partition("=")
        if not sep:
            raise ParseError(f"bad device option {p!r}", line)
        opts[k] = v
    try:
        n = int(n)
        depth = int(opts.pop("max_depth")) if "max_depth" in opts else None
        lr = float(opts.pop("learning_rate")) if "learning_rate" in opts else 0.1
        rng_seed = int(opts.pop("seed")) if "seed" in opts else seed + idx
        if opts:
            raise ParseError(f"unknown device option {sorted(opts)[0]!r}", line)
        if kind == "gboost":
            spec = gboost_spec(n, lr, depth or 3, rng_seed)
        elif kind == "adaboost":
            spec = adaboost_spec(n, depth or 3, rng_seed)
        else:
            spec = EnsembleSpec(kind, base, n, lr, rng_seed=rng_seed)
            if depth is not None:
                spec = replace(spec, tree_params=replace(spec.tree_params, max_depth=depth))
        if spec.base != base:
            raise ConfigurationError(f"{kind} uses base {spec.base}, not {base}")
        return DeviceConfig(spec, dataset)
    except (ValueError, ConfigurationError) as e:
        if isinstance(e, ParseError):
            raise
        raise ParseError(str(e), line) from None


def parse_config_text(text, source="<config>"):
    """Build an ExperimentConfig from ``key = value`` lines.

    Keys: base (a builtin name), seed, n_tasks, fake_fraction, dataset_csv,
    train_n, split_seed, modes, ratios, alpha, epsilon, aggregation (on/off),
    grid_rows, grid_cols, output_dir, and ``device.N = kind base n dataset
    [max_depth=..] [learning_rate=..] [seed=..]``. Device lines replace the
    base config's devices. '#' starts a comment.
    """
    values, devices = {}, {}
    for line, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ParseError(f"{source}: expected 'key = value'", line)
        if key.startswith("device."):
            try:
                idx = int(key.split(".", 1)[1])
            except ValueError:
                raise ParseError(f"{source}: bad device key {key!r}", line) from None
            devices[idx] = (value, line)
        elif key in _SCALAR_KEYS:
            values[key] = (value, line)
        else:
            raise ParseError(f"{source}: unknown key {key!r}", line)

    def get(key, conv, default):
        if key not in values:
            return default
        v, line = values[key]
        try:
            return conv(v)
        except (ValueError, ConfigurationError) as e:
            raise ParseError(f"{source}: {key}: {e}", line) from None

    seed = get("seed", int, DEFAULT_SEED)
    cfg = builtin_config(get("base", str, "model1"), seed)
    if devices:
        cfg.devices = [
            _parse_device(v, line, seed, i) for i, (v, line) in sorted(devices.items())
        ]
    gen = cfg.gen
    gen = replace(
        gen,
        n_tasks=get("n_tasks", int, gen.n_tasks),
        fake_fraction=get("fake_fraction", float, gen.fake_fraction),
        grid_rows=get("grid_rows", int, gen.grid_rows),
        grid_cols=get("grid_cols", int, gen.grid_cols),
    )
    cfg.gen = gen
    cfg.dataset_csv = get("dataset_csv", str, None)
    cfg.train_n = get("train_n", int, cfg.train_n)
    cfg.split_seed = get("split_seed", int, cfg.split_seed)
    cfg.modes = get("modes", _csv_list(str), cfg.modes)
    cfg.ratios = get("ratios", _csv_list(float), cfg.ratios)
    cfg.output_dir = get("output_dir", str, None)
    aggregation = get("aggregation", _on_off, not cfg.centralized)
    if aggregation:
        fed = cfg.federation or FederationConfig()
        cfg.federation = replace(
            fed,
            k=len(cfg.devices),
            alpha=get("alpha", float, fed.alpha),
            epsilon=get("epsilon", float, fed.epsilon),
        )
    else:
        cfg.federation = None
    cfg.name = Path(source).stem if source != "<config>" else "custom"
    return cfg.validate()


def _csv_list(conv):
    def parse(v):
        return tuple(conv(x.strip()) for x in v.split(",") if x.strip())

    return parse


def _on_off(v):
    v = v.lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {v!r}")


def load_config_file(path):
    return parse_config_text(Path(path).read_text(encoding="utf-8"), str(path))
