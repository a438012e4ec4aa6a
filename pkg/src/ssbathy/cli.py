"""Command-line driver for the two-stage bathymetry pipeline.

Subcommands cover the whole synthetic workflow end to end:

    generate         synthesize a seafloor grid from the terrain recipe
    simulate         plan a lawnmower survey and record sonar + altimeter data
    drape            georeference a recorded survey against a reference grid
    train-estimator  fit the learned normal estimator on draped windows
    reconstruct      fit the neural heightfield to normals + altimeter points
    evaluate         compare a reconstructed grid against a reference grid

Every run is described by a plain-text ``key = value`` config file
(``--config``, required).  Blank lines and lines starting with ``#`` are
ignored.  Individual keys can be overridden on the command line with
``--set key=value`` (repeatable); ``--seed N`` overrides the top-level
``seed`` and wins over ``--set seed=...``.  Unknown keys are rejected.

Keys are grouped by dotted prefix and default to the corresponding
dataclass defaults:

    terrain.*   TerrainSpec     (nx, ny, cell, x0, y0, base_depth, hills,
                                 rock_count, rock_radius, rock_height,
                                 ridges, smoothness, seed)
    survey.*    SurveyConfig    (line_spacing, heading, ping_spacing,
                                 num_lines, crossing, max_range,
                                 bin_resolution, first_range, tilt,
                                 aperture, sensor_z, gain, noise_floor,
                                 intensity_noise, altimeter_noise, seed)
    loss.*      LossConfig      (beta, tv_across, tv_along)
    train.*     EstimatorTrainConfig (epochs, batch_windows, lr,
                                 val_fraction, seed, hidden, taps)
    recon.*     ReconConfig     (w_height, epochs, batch_pings,
                                 altimeter_batch, crossing_steps,
                                 crossing_rate, lr, lr_decay, depth,
                                 width, w0, seed)
    windows.*   training-window cutting (pings_per_window=32, overlap=0.75,
                                 augment=true, noise_bins=10, threshold=3.0)
    paths.*     input/output file paths (see _PATH_DEFAULTS)
    eval.*      evaluation knobs (bins=50 histogram bins)

Top-level keys: ``estimator`` (lambertian | learned | gt-normals, default
lambertian) and ``seed`` (default 0).  The top-level seed feeds every
section seed that is not set explicitly, so one ``--seed`` flag makes the
whole pipeline reproducible.  Angles (survey.heading/tilt/aperture) are in
radians; lists of tuples (terrain.hills/ridges) are semicolon-separated
groups of comma-separated numbers; pairs (terrain.rock_radius/rock_height)
are two comma-separated numbers; optional integers/floats accept ``none``.

The reconstructed grid is sampled on the raster that ``terrain.*``
describes (same origin, cell and node counts), so ``evaluate`` can compare
it against the generated reference grid cell for cell.

Exit codes: 0 success, 1 usage or configuration error, 2 input-data error,
3 numerical failure during optimization.  Failures print a single
``error: ...`` line to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .draping import (
    drape_ping,
    drape_survey,
    make_training_windows,
    read_draped,
    write_draped,
)
from .estimator import (
    EstimatorTrainConfig,
    LambertianEstimator,
    LearnedEstimator,
    LossConfig,
    normals_estimated_ping,
    normals_gt_ping,
    train_learned_estimator,
)
from .evaluation import (
    format_summary,
    map_metrics,
    map_metrics_rows,
    write_histogram_csv,
    write_metrics_csv,
)
from .heightfield import TerrainSpec, generate_terrain, read_grid, write_grid
from .nn import DomainScale, NumericalFailure, init_siren, save_checkpoint
from .recon import (
    PingConstraint,
    ReconConfig,
    altimeter_ground_points,
    export_bathymetry,
    optimize,
    scale_for_survey,
    write_training_log,
)
from .survey import SurveyConfig, read_survey, simulate_survey, write_survey


class UsageError(Exception):
    """Bad command line or configuration; exits with status 1."""


# ---------------------------------------------------------------------------
# run configuration

_SECTION_CLASSES = {
    "terrain": TerrainSpec,
    "survey": SurveyConfig,
    "loss": LossConfig,
    "train": EstimatorTrainConfig,
    "recon": ReconConfig,
}

_WINDOW_DEFAULTS = {
    "pings_per_window": 32,
    "overlap": 0.75,
    "augment": True,
    "noise_bins": 10,
    "threshold": 3.0,
}

_PATH_DEFAULTS = {
    "grid": "terrain.grid",
    "survey": "survey.txt",
    "draped": "draped.txt",
    "estimator": "estimator.bsn1",
    "checkpoint": "recon.srn1",
    "recon_grid": "recon.grid",
    "recon_log": "recon_log.csv",
    "train_log": "train_log.csv",
    "metrics": "metrics.csv",
    "histogram": "histogram.csv",
}

_EVAL_DEFAULTS = {"bins": 50}

_ESTIMATOR_CHOICES = ("lambertian", "learned", "gt-normals")


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_optional_int(s: str):
    return None if s.strip().lower() == "none" else int(s)


def _parse_optional_float(s: str):
    return None if s.strip().lower() == "none" else float(s)


def _parse_pair(s: str):
    parts = [float(v) for v in s.replace(",", " ").split()]
    if len(parts) != 2:
        raise ValueError(f"expected two numbers, got {len(parts)}")
    return (parts[0], parts[1])


def _tuple_list_parser(arity: int):
    def parse(s: str):
        out = []
        for group in s.split(";"):
            group = group.strip()
            if not group:
                continue
            vals = [float(v) for v in group.replace(",", " ").split()]
            if len(vals) != arity:
                raise ValueError(
                    f"each ;-separated group needs {arity} numbers, got {len(vals)}"
                )
            out.append(tuple(vals))
        return out

    return parse


_SPECIAL_PARSERS = {
    ("terrain", "hills"): _tuple_list_parser(4),
    ("terrain", "ridges"): _tuple_list_parser(6),
    ("terrain", "rock_radius"): _parse_pair,
    ("terrain", "rock_height"): _parse_pair,
    ("survey", "num_lines"): _parse_optional_int,
    ("survey", "first_range"): _parse_optional_float,
}


def _parser_for(default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def _schema():
    """Flat map of every config key to (default, value parser)."""
    keys = {}
    for section, cls in _SECTION_CLASSES.items():
        for f in dataclasses.fields(cls):
            default = (
                f.default_factory()
                if f.default is dataclasses.MISSING
                else f.default
            )
            parser = _SPECIAL_PARSERS.get((section, f.name)) or _parser_for(default)
            keys[f"{section}.{f.name}"] = (default, parser)
    for section, table in (
        ("windows", _WINDOW_DEFAULTS),
        ("paths", _PATH_DEFAULTS),
        ("eval", _EVAL_DEFAULTS),
    ):
        for name, default in table.items():
            keys[f"{section}.{name}"] = (default, _parser_for(default))
    keys["estimator"] = ("lambertian", str)
    keys["seed"] = (0, int)
    return keys


@dataclasses.dataclass
class RunConfig:
    """One experiment: every stage's parameters plus file locations."""

    terrain: TerrainSpec
    survey: SurveyConfig
    loss: LossConfig
    train: EstimatorTrainConfig
    recon: ReconConfig
    windows: dict
    paths: dict
    eval: dict
    estimator: str
    seed: int


def _apply(schema, values, explicit, key, sval, where):
    if key not in schema:
        raise UsageError(f"{where}: unknown config key {key!r}")
    _, parser = schema[key]
    try:
        values[key] = parser(sval)
    except ValueError as e:
        raise UsageError(f"{where}: bad value for {key}: {e}") from None
    explicit.add(key)


def _section_values(values, section):
    pre = section + "."
    return {k[len(pre):]: v for k, v in values.items() if k.startswith(pre)}


def load_run_config(path, seed=None, sets=()) -> RunConfig:
    """Parse a config file plus overrides into a validated RunConfig.

    Any problem — unreadable file, unknown key, unparseable or invalid
    value — raises UsageError.
    """
    schema = _schema()
    values = {k: default for k, (default, _) in schema.items()}
    explicit: set[str] = set()

    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror or e}") from None

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, sval = line.partition("=")
        _apply(schema, values, explicit, key.strip(), sval.strip(),
               where=f"{path}:{lineno}")

    for item in sets:
        if "=" not in item:
            raise UsageError(f"--set {item!r}: expected KEY=VALUE")
        key, _, sval = item.partition("=")
        _apply(schema, values, explicit, key.strip(), sval.strip(),
               where=f"--set {key.strip()}")

    if seed is not None:
        values["seed"] = seed
        explicit.add("seed")
    for k in ("terrain.seed", "survey.seed", "train.seed", "recon.seed"):
        if k not in explicit:
            values[k] = values["seed"]

    if values["estimator"] not in _ESTIMATOR_CHOICES:
        raise UsageError(
            f"estimator must be one of {', '.join(_ESTIMATOR_CHOICES)}, "
            f"got {values['estimator']!r}"
        )

    try:
        terrain = TerrainSpec(**_section_values(values, "terrain"))
        survey = SurveyConfig(**_section_values(values, "survey"))
        loss = LossConfig(**_section_values(values, "loss"))
        train = EstimatorTrainConfig(**_section_values(values, "train"))
        recon = ReconConfig(**_section_values(values, "recon"))
    except ValueError as e:
        raise UsageError(str(e)) from None

    windows = _section_values(values, "windows")
    if windows["pings_per_window"] < 1:
        raise UsageError("windows.pings_per_window must be positive")
    if not 0.0 <= windows["overlap"] < 1.0:
        raise UsageError("windows.overlap must lie in [0, 1)")
    if values["eval.bins"] < 1:
        raise UsageError("eval.bins must be positive")

    return RunConfig(
        terrain=terrain,
        survey=survey,
        loss=loss,
        train=train,
        recon=recon,
        windows=windows,
        paths=_section_values(values, "paths"),
        eval=_section_values(values, "eval"),
        estimator=values["estimator"],
        seed=values["seed"],
    )


# ---------------------------------------------------------------------------
# shared command helpers

def _input_file(path, what) -> str:
    if not os.path.isfile(path):
        raise ValueError(f"{what} not found: {path}")
    return path


def _ensure_parent(path) -> str:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _terrain_extent(spec: TerrainSpec):
    return (
        spec.x0,
        spec.y0,
        spec.x0 + (spec.nx - 1) * spec.cell,
        spec.y0 + (spec.ny - 1) * spec.cell,
    )


_HISTORY_COLUMNS = (
    "epoch", "train_loss", "val_loss", "val_mae", "val_rel", "val_rmse",
    "val_acc1", "val_acc2", "val_acc3", "lr",
)


def _write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(_HISTORY_COLUMNS) + "\n")
        for row in history:
            f.write(",".join(
                str(row[c]) if c == "epoch" else f"{row[c]:.17g}"
                for c in _HISTORY_COLUMNS
            ) + "\n")


def _epoch_line(row, total_epochs) -> str:
    return (
        f"epoch {row['epoch'] + 1}/{total_epochs} "
        f"train {row['train_loss']:.6f} val {row['val_loss']:.6f} "
        f"mae {row['val_mae']:.6f} rel {row['val_rel']:.6f} "
        f"rmse {row['val_rmse']:.6f} "
        f"acc {row['val_acc1']:.2f}/{row['val_acc2']:.2f}/{row['val_acc3']:.2f}"
    )


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(cfg: RunConfig, args) -> None:
    field = generate_terrain(cfg.terrain)
    write_grid(field, _ensure_parent(cfg.paths["grid"]))
    print(f"wrote {cfg.paths['grid']} "
          f"({field.nx} x {field.ny} nodes, cell {field.cell:g} m)")


def cmd_simulate(cfg: RunConfig, args) -> None:
    field = read_grid(_input_file(cfg.paths["grid"], "terrain grid"))
    x_min, x_max, y_min, y_max = field.extent
    width, height = x_max - x_min, y_max - y_min
    if cfg.survey.max_range > min(width, height):
        print(f"warning: sonar range {cfg.survey.max_range:g} m exceeds the "
              f"grid extent ({width:g} x {height:g} m); swath coverage is "
              f"truncated at the edges", file=sys.stderr)
    lines = simulate_survey(field, cfg.survey)
    write_survey(lines, _ensure_parent(cfg.paths["survey"]))
    n_pings = sum(len(l.pings) for l in lines)
    n_alt = sum(len(l.altimeter) for l in lines)
    print(f"wrote {cfg.paths['survey']} ({len(lines)} lines, "
          f"{n_pings} pings, {n_alt} altimeter readings)")


def cmd_drape(cfg: RunConfig, args) -> None:
    field = read_grid(_input_file(cfg.paths["grid"], "terrain grid"))
    lines = read_survey(
        _input_file(cfg.paths["survey"], "survey file"),
        tilt=cfg.survey.tilt, aperture=cfg.survey.aperture,
    )
    draped = drape_survey(lines, field)
    write_draped(draped, _ensure_parent(cfg.paths["draped"]))
    windows = make_training_windows(draped, **cfg.windows)
    n_pings = sum(len(l.pings) for l in draped)
    print(f"wrote {cfg.paths['draped']} "
          f"({n_pings} pings, {len(windows)} training windows)")


def cmd_train_estimator(cfg: RunConfig, args) -> None:
    start = None
    if getattr(args, "resume", False):
        start = LearnedEstimator.load(
            _input_file(cfg.paths["estimator"], "estimator file")
        )
    lines = read_draped(
        _input_file(cfg.paths["draped"], "draped dataset"),
        tilt=cfg.survey.tilt, aperture=cfg.survey.aperture,
    )
    windows = make_training_windows(lines, **cfg.windows)
    if not windows:
        raise ValueError("draped dataset yields no training windows")
    est, history = train_learned_estimator(
        windows, cfg.loss, cfg.train, estimator=start,
        on_epoch=lambda row: print(_epoch_line(row, cfg.train.epochs)),
    )
    est.save(_ensure_parent(cfg.paths["estimator"]))
    _write_history_csv(_ensure_parent(cfg.paths["train_log"]), history)
    print(f"wrote {cfg.paths['estimator']} ({est.param_count} parameters, "
          f"final val mae {history[-1]['val_mae']:.6g}) "
          f"and {cfg.paths['train_log']}")


def _normal_provider(cfg: RunConfig):
    """Per-ping (target, valid) source for the configured estimator."""
    nb = cfg.windows["noise_bins"]
    th = cfg.windows["threshold"]
    if cfg.estimator == "gt-normals":
        field = read_grid(_input_file(cfg.paths["grid"], "terrain grid"))
        return lambda ping: normals_gt_ping(drape_ping(ping, field))
    if cfg.estimator == "learned":
        est = LearnedEstimator.load(
            _input_file(cfg.paths["estimator"], "estimator file")
        )
    else:
        est = LambertianEstimator(cfg.survey.gain)
    return lambda ping: normals_estimated_ping(est, ping, nb, th)


def _scale_covering(constraints, alt, extent) -> DomainScale:
    """Survey domain widened so the export raster always fits inside it."""
    s = scale_for_survey(constraints, alt)
    lo = np.minimum(s.xy_center - s.xy_halfwidth, (extent[0], extent[1]))
    hi = np.maximum(s.xy_center + s.xy_halfwidth, (extent[2], extent[3]))
    return DomainScale(0.5 * (lo + hi), np.maximum(0.5 * (hi - lo), 1e-6),
                       s.z_offset, s.z_scale)


def cmd_reconstruct(cfg: RunConfig, args) -> None:
    survey_path = _input_file(cfg.paths["survey"], "survey file")
    provider = _normal_provider(cfg)
    lines = read_survey(survey_path, tilt=cfg.survey.tilt,
                        aperture=cfg.survey.aperture)
    if not any(line.pings for line in lines):
        raise ValueError(f"survey file {survey_path} contains no pings")

    constraints = []
    for line in lines:
        for ping in line.pings:
            target, valid = provider(ping)
            constraints.append(PingConstraint(ping.pose, ping.geom, target, valid))
    alt = altimeter_ground_points(lines)

    rc = cfg.recon
    model = init_siren(
        depth=rc.depth, width=rc.width, w0_first=rc.w0, w0_hidden=1.0,
        scale=_scale_covering(constraints, alt, _terrain_extent(cfg.terrain)),
        seed=rc.seed,
    )
    model, log = optimize(constraints, alt, rc, model=model)
    save_checkpoint(model, _ensure_parent(cfg.paths["checkpoint"]))
    write_training_log(_ensure_parent(cfg.paths["recon_log"]), log)
    grid = export_bathymetry(model, _terrain_extent(cfg.terrain), cfg.terrain.cell)
    write_grid(grid, _ensure_parent(cfg.paths["recon_grid"]))

    last = log[-1]
    print(f"optimized {len(log)} epochs with {cfg.estimator} normals: "
          f"loss {last['loss_total']:.6g} "
          f"(normal {last['loss_normal']:.6g}, height {last['loss_height']:.6g})")
    print(f"wrote {cfg.paths['checkpoint']}, {cfg.paths['recon_grid']} "
          f"({grid.nx} x {grid.ny} nodes) and {cfg.paths['recon_log']}")


def cmd_evaluate(cfg: RunConfig, args) -> None:
    recon = read_grid(_input_file(cfg.paths["recon_grid"], "reconstructed grid"))
    gt = read_grid(_input_file(cfg.paths["grid"], "reference grid"))
    m = map_metrics(recon, gt, nbins=cfg.eval["bins"])
    rows = map_metrics_rows(m)
    write_metrics_csv(_ensure_parent(cfg.paths["metrics"]), rows)
    write_histogram_csv(_ensure_parent(cfg.paths["histogram"]),
                        m.bin_edges, m.densities)
    print(format_summary(rows))
    print(f"wrote {cfg.paths['metrics']} and {cfg.paths['histogram']}")


_COMMANDS = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "drape": cmd_drape,
    "train-estimator": cmd_train_estimator,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
}


# ---------------------------------------------------------------------------
# argument parsing and entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssbathy",
                     description="sidescan-to-bathymetry pipeline")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    helps = {
        "generate": "synthesize a seafloor grid",
        "simulate": "record a sonar + altimeter survey over a grid",
        "drape": "georeference a survey against a reference grid",
        "train-estimator": "fit the learned normal estimator",
        "reconstruct": "fit the neural heightfield and export a grid",
        "evaluate": "compare a reconstructed grid against a reference",
    }
    for name in _COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, metavar="PATH",
                       help="run configuration file (key = value lines)")
        p.add_argument("--seed", type=int, default=None, metavar="N",
                       help="override the top-level seed")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        if name == "train-estimator":
            p.add_argument("--resume", action="store_true",
                           help="continue training from the existing estimator file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:  # --help
            return int(e.code or 0)
        cfg = load_run_config(args.config, seed=args.seed, sets=args.set)
        _COMMANDS[args.command](cfg, args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericalFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
