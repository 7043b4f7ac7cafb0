"""Evaluation protocol: minimum-attacked-frames, success-rate curves, sweeps.

The bundled scenario set is 10 move-in plus 10 move-out synthetic
scenarios with varied geometry. A "trial" regenerates a scenario's
detection noise from a derived seed, so success rates average over both
scenario geometry and noise draws. Every derived seed is a CRC of the cell
key and the master seed: results are reproducible bit for bit and
independent of evaluation order, which lets sweep cells run on any number
of workers and lets interrupted sweeps resume from a journal.
"""

from __future__ import annotations

import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .attack import (
    AttackSpec,
    BudgetExhausted,
    Infeasible,
    default_start_frame,
    erase_attack,
    hijack,
    resolve_target,
)
from .estimation import NoiseConfig
from .scenarios import Scenario, gen_move_in, gen_move_out, load_scenario
from .tracking import TrackerConfig

BUNDLE_SIZE = 10
BUNDLE_SIGMA = 0.35
ATTACK_KINDS = ("hijack", "erase")


class NoSuccess(RuntimeError):
    """No attack budget up to the scenario length hijacks the track."""


class ConfigError(ValueError):
    """Sweep config rejected; the message carries the offending field path."""


def stable_seed(*parts) -> int:
    """Deterministic 32-bit seed from the textual form of the parts."""
    text = "|".join(str(p) for p in parts)
    return zlib.crc32(text.encode("utf-8"))


@dataclass(frozen=True)
class ScenarioMaker:
    """Named factory producing a scenario for a given detection-noise seed."""

    name: str
    build: Callable[[int], Scenario]

    def __call__(self, noise_seed: int) -> Scenario:
        return self.build(noise_seed)


def _move_in_maker(i: int) -> ScenarioMaker:
    name = f"move_in_{i:02d}"

    def build(noise_seed: int) -> Scenario:
        return gen_move_in(
            lateral_offset=3.0 + 0.25 * i,
            forward_speed=0.22 + 0.01 * i,
            n_frames=100,
            seed=noise_seed,
            noise_sigma=BUNDLE_SIGMA,
            start_distance=34.0 + 1.2 * i,
            name=name,
        )

    return ScenarioMaker(name, build)


def _move_out_maker(i: int) -> ScenarioMaker:
    name = f"move_out_{i:02d}"

    def build(noise_seed: int) -> Scenario:
        return gen_move_out(
            forward_speed=0.012 - 0.0025 * i,
            n_frames=100,
            seed=noise_seed,
            noise_sigma=BUNDLE_SIGMA,
            start_distance=18.0 + 0.8 * i,
            lateral_offset=0.02 * (i - 4.5),
            name=name,
        )

    return ScenarioMaker(name, build)


def bundled_makers(subset: str = "bundled") -> list[ScenarioMaker]:
    """The evaluation scenario set, or its move-in / move-out half."""
    move_in = [_move_in_maker(i) for i in range(BUNDLE_SIZE)]
    move_out = [_move_out_maker(i) for i in range(BUNDLE_SIZE)]
    if subset == "bundled":
        return move_in + move_out
    if subset == "bundled-move-in":
        return move_in
    if subset == "bundled-move-out":
        return move_out
    raise ValueError(f"unknown bundled subset {subset!r}")


def resolve_makers(scenario_set: str) -> list[ScenarioMaker]:
    """Maker list for a set name: a bundled subset or a scenario file path."""
    if scenario_set.startswith("bundled"):
        return bundled_makers(scenario_set)
    path = Path(scenario_set)
    if path.is_dir():
        files = sorted(path.glob("*.scn"))
        if not files:
            raise ValueError(f"no .scn files in {path}")
        return [_file_maker(f) for f in files]
    if path.is_file():
        return [_file_maker(path)]
    raise ValueError(f"unknown scenario set {scenario_set!r}")


def _file_maker(path: Path) -> ScenarioMaker:
    scenario = load_scenario(path)

    def build(noise_seed: int) -> Scenario:
        # File scenarios carry fixed detections; trials repeat them.
        return scenario

    return ScenarioMaker(scenario.name, build)


def make_config(cov: float, r_frames: int, h_frames: int) -> TrackerConfig:
    return TrackerConfig(
        r_frames=r_frames, h_frames=h_frames, noise=NoiseConfig(cov=cov)
    )


def min_frames(
    scenario: Scenario,
    config: TrackerConfig,
    gamma: float = 0.1,
    start_frame: Optional[int] = None,
    k_max: Optional[int] = None,
) -> int:
    """Smallest attack budget that hijacks the scenario's target track.

    Scans k upward with early exit; a hijack that succeeds within budget k
    after failing at k - 1 needed exactly k attacked frames.
    """
    if scenario.direction is None:
        raise ValueError("scenario has no attack direction")
    start = start_frame if start_frame is not None else default_start_frame(config)
    tid = resolve_target(scenario, config, start)
    cap = k_max if k_max is not None else len(scenario) - start - 1
    for k in range(1, cap + 1):
        spec = AttackSpec(
            target=tid,
            direction=scenario.direction,
            patch=scenario.patch,
            gamma=gamma,
            max_frames=k,
        )
        try:
            hijack(scenario, config, spec, start_frame=start, post_trace=False)
            return k
        except BudgetExhausted:
            continue
        except Infeasible as exc:
            raise NoSuccess(f"attack infeasible on {scenario.name}: {exc}") from exc
    raise NoSuccess(f"no budget up to {cap} hijacks {scenario.name}")


def _run_one(
    scenario: Scenario,
    config: TrackerConfig,
    kind: str,
    k: int,
    ae_success_prob: float,
    rng_seed: int,
) -> tuple[bool, Optional[int]]:
    """One attack run; returns (success, frames needed when hijacking)."""
    tid = resolve_target(scenario, config)
    if kind == "hijack":
        spec = AttackSpec(
            target=tid,
            direction=scenario.direction,
            patch=scenario.patch,
            max_frames=k,
        )
        try:
            res = hijack(
                scenario,
                config,
                spec,
                ae_success_prob=ae_success_prob,
                rng=np.random.default_rng(rng_seed),
                post_trace=False,
            )
            return True, res.frames_attacked
        except BudgetExhausted:
            return False, None
    if kind == "erase":
        res = erase_attack(scenario, config, tid, n_frames=k, post_trace=False)
        return res.success, None
    raise ValueError(f"unknown attack kind {kind!r}")


def success_rate(
    makers: Sequence[ScenarioMaker],
    config: TrackerConfig,
    kind: str,
    k: int,
    trials: int,
    seed: int,
    ae_success_prob: float = 1.0,
) -> float:
    """Fraction of (scenario x trial) runs succeeding with budget k."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    successes = 0
    total = 0
    for maker in makers:
        for trial in range(trials):
            noise_seed = stable_seed(
                maker.name, kind, config.noise.cov, config.r_frames,
                config.h_frames, k, seed, trial,
            )
            scenario = maker(noise_seed)
            total += 1
            try:
                ok, _ = _run_one(scenario, config, kind, k, ae_success_prob, noise_seed)
            except (Infeasible, ValueError):
                ok = False
            successes += ok
    return successes / total


def erase_reliability_requirement(r_frames: int) -> float:
    """Per-frame AE reliability an R-frame erasure demands: (R - 1) / R."""
    if r_frames < 1:
        raise ValueError("r_frames must be >= 1")
    return (r_frames - 1) / r_frames


# --- sweep ------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    scenario_set: str = "bundled"
    cov_grid: tuple[float, ...] = (0.1,)
    rh_presets: tuple[tuple[int, int], ...] = ((60, 6),)
    k_grid: tuple[int, ...] = (1, 2, 3)
    kinds: tuple[str, ...] = ("hijack",)
    ae_success_prob: float = 1.0
    trials: int = 3
    seed: int = 0

    def __post_init__(self):
        if not self.cov_grid or not self.k_grid or not self.rh_presets or not self.kinds:
            raise ConfigError("all sweep grids must be non-empty")
        if self.trials < 1:
            raise ConfigError("trials: must be >= 1")

    def to_json(self) -> str:
        payload = {
            "scenario_set": self.scenario_set,
            "cov_grid": list(self.cov_grid),
            "rh_presets": [list(p) for p in self.rh_presets],
            "k_grid": list(self.k_grid),
            "kinds": list(self.kinds),
            "ae_success_prob": self.ae_success_prob,
            "trials": self.trials,
            "seed": self.seed,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def sweep_config_from_dict(payload: dict) -> SweepConfig:
    def fail(path, why):
        raise ConfigError(f"{path}: {why}")

    if not isinstance(payload, dict):
        fail("<root>", "expected an object")
    known = {
        "scenario_set", "cov_grid", "rh_presets", "k_grid",
        "kinds", "ae_success_prob", "trials", "seed",
    }
    for key in payload:
        if key not in known:
            fail(key, "unknown field")
    out = {}
    if "scenario_set" in payload:
        if not isinstance(payload["scenario_set"], str):
            fail("scenario_set", "expected a string")
        out["scenario_set"] = payload["scenario_set"]
    if "cov_grid" in payload:
        vals = payload["cov_grid"]
        if not isinstance(vals, list) or not vals:
            fail("cov_grid", "expected a non-empty list")
        for i, v in enumerate(vals):
            if not isinstance(v, (int, float)) or v < 0:
                fail(f"cov_grid[{i}]", "expected a non-negative number")
        out["cov_grid"] = tuple(float(v) for v in vals)
    if "rh_presets" in payload:
        vals = payload["rh_presets"]
        if not isinstance(vals, list) or not vals:
            fail("rh_presets", "expected a non-empty list")
        presets = []
        for i, pair in enumerate(vals):
            if (
                not isinstance(pair, list)
                or len(pair) != 2
                or not all(isinstance(x, int) and x >= 1 for x in pair)
            ):
                fail(f"rh_presets[{i}]", "expected [R, H] with integers >= 1")
            presets.append((pair[0], pair[1]))
        out["rh_presets"] = tuple(presets)
    if "k_grid" in payload:
        vals = payload["k_grid"]
        if not isinstance(vals, list) or not vals:
            fail("k_grid", "expected a non-empty list")
        for i, v in enumerate(vals):
            if not isinstance(v, int) or v < 1:
                fail(f"k_grid[{i}]", "expected an integer >= 1")
        out["k_grid"] = tuple(vals)
    if "kinds" in payload:
        vals = payload["kinds"]
        if not isinstance(vals, list) or not vals:
            fail("kinds", "expected a non-empty list")
        for i, v in enumerate(vals):
            if v not in ATTACK_KINDS:
                fail(f"kinds[{i}]", f"expected one of {ATTACK_KINDS}")
        out["kinds"] = tuple(vals)
    if "ae_success_prob" in payload:
        v = payload["ae_success_prob"]
        if not isinstance(v, (int, float)) or not 0.0 < v <= 1.0:
            fail("ae_success_prob", "expected a number in (0, 1]")
        out["ae_success_prob"] = float(v)
    if "trials" in payload:
        v = payload["trials"]
        if not isinstance(v, int) or v < 1:
            fail("trials", "expected an integer >= 1")
        out["trials"] = v
    if "seed" in payload:
        v = payload["seed"]
        if not isinstance(v, int):
            fail("seed", "expected an integer")
        out["seed"] = v
    return SweepConfig(**out)


def sweep_config_from_json(text: str) -> SweepConfig:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: invalid JSON ({exc})") from None
    # Accept a manifest wrapper produced by the CLI as well.
    if isinstance(payload, dict) and "config" in payload and "subcommand" in payload:
        payload = payload["config"]
    return sweep_config_from_dict(payload)


def fig4b_config() -> SweepConfig:
    """Success-rate-vs-attacked-frames curves for both attacks and presets."""
    return SweepConfig(
        scenario_set="bundled",
        cov_grid=(0.1,),
        rh_presets=((60, 6), (5, 2)),
        k_grid=(1, 2, 3, 4, 5, 10, 20, 40, 59, 60),
        kinds=("hijack", "erase"),
        trials=3,
        seed=0,
    )


def quick_config() -> SweepConfig:
    """Small smoke sweep for CI and CLI examples."""
    return SweepConfig(
        scenario_set="bundled",
        cov_grid=(0.1,),
        rh_presets=((60, 6),),
        k_grid=(1, 3),
        kinds=("hijack",),
        trials=2,
        seed=0,
    )


PRESETS = {"fig4b": fig4b_config, "quick": quick_config}


@dataclass(frozen=True)
class SweepRow:
    scenario: str
    kind: str
    cov: float
    r_frames: int
    h_frames: int
    k: int
    trials: int
    successes: int
    success_rate: float
    mean_min_frames: Optional[float]
    error: str = ""

    def key(self) -> tuple:
        return (self.scenario, self.kind, self.cov, self.r_frames, self.h_frames, self.k)


CSV_COLUMNS = (
    "scenario,kind,cov,R,H,k,trials,successes,success_rate,mean_min_frames,error"
)


@dataclass
class ResultTable:
    rows: list[SweepRow]
    seed: int
    version: str = __version__

    def sorted_rows(self) -> list[SweepRow]:
        return sorted(self.rows, key=lambda r: r.key())

    def to_csv(self) -> str:
        lines = [
            "# trackhijack sweep results",
            f"# seed {self.seed}",
            f"# version {self.version}",
            CSV_COLUMNS,
        ]
        for r in self.sorted_rows():
            mmf = "" if r.mean_min_frames is None else repr(r.mean_min_frames)
            lines.append(
                f"{r.scenario},{r.kind},{r.cov!r},{r.r_frames},{r.h_frames},"
                f"{r.k},{r.trials},{r.successes},{r.success_rate!r},{mmf},{r.error}"
            )
        return "\n".join(lines) + "\n"

    def series(self) -> dict[tuple, list[tuple[int, float]]]:
        """Aggregated success-rate-vs-k curves, one per (kind, R, H, cov)."""
        acc: dict[tuple, dict[int, list[int]]] = {}
        for r in self.sorted_rows():
            if r.error:
                continue
            key = (r.kind, r.r_frames, r.h_frames, r.cov)
            cell = acc.setdefault(key, {}).setdefault(r.k, [0, 0])
            cell[0] += r.successes
            cell[1] += r.trials
        out = {}
        for key, by_k in acc.items():
            out[key] = [(k, by_k[k][0] / by_k[k][1]) for k in sorted(by_k)]
        return out

    def write_outputs(self, out_dir: Path) -> list[Path]:
        """Write the table and one plot-data file per curve; returns paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        table = out_dir / "table.csv"
        table.write_text(self.to_csv(), encoding="utf-8")
        paths.append(table)
        for (kind, r, h, cov), points in sorted(self.series().items()):
            name = f"series_{kind}_R{r}_H{h}_cov{cov!r}.dat"
            lines = ["# k success_rate"]
            lines += [f"{k} {rate!r}" for k, rate in points]
            p = out_dir / name
            p.write_text("\n".join(lines) + "\n", encoding="utf-8")
            paths.append(p)
        return paths


def _cell_list(cfg: SweepConfig) -> list[tuple]:
    makers = resolve_makers(cfg.scenario_set)
    cells = []
    for maker in makers:
        for kind in cfg.kinds:
            for cov in cfg.cov_grid:
                for r, h in cfg.rh_presets:
                    for k in cfg.k_grid:
                        cells.append((maker.name, kind, cov, r, h, k))
    return sorted(cells)


def evaluate_cell(cfg: SweepConfig, cell: tuple) -> SweepRow:
    """One (scenario, kind, cov, R, H, k) cell; errors land in the row."""
    scenario_name, kind, cov, r, h, k = cell
    makers = {m.name: m for m in resolve_makers(cfg.scenario_set)}
    maker = makers[scenario_name]
    config = make_config(cov, r, h)
    successes = 0
    needed: list[int] = []
    try:
        for trial in range(cfg.trials):
            noise_seed = stable_seed(
                scenario_name, kind, cov, r, h, k, cfg.seed, trial
            )
            scenario = maker(noise_seed)
            ok, frames = _run_one(
                scenario, config, kind, k, cfg.ae_success_prob, noise_seed
            )
            successes += ok
            if ok and frames is not None:
                needed.append(frames)
    except Exception as exc:  # recorded, never aborts the sweep
        return SweepRow(
            scenario=scenario_name, kind=kind, cov=cov, r_frames=r, h_frames=h,
            k=k, trials=cfg.trials, successes=0, success_rate=0.0,
            mean_min_frames=None, error=f"{type(exc).__name__}: {exc}",
        )
    mean_needed = sum(needed) / len(needed) if needed else None
    return SweepRow(
        scenario=scenario_name, kind=kind, cov=cov, r_frames=r, h_frames=h,
        k=k, trials=cfg.trials, successes=successes,
        success_rate=successes / cfg.trials, mean_min_frames=mean_needed,
    )


def _row_to_json(row: SweepRow) -> str:
    return json.dumps(row.__dict__, sort_keys=True)


def _row_from_json(text: str) -> SweepRow:
    return SweepRow(**json.loads(text))


def _config_digest(cfg: SweepConfig) -> str:
    return f"{zlib.crc32(cfg.to_json().encode()):08x}"


def run_sweep(
    cfg: SweepConfig,
    out_dir: Optional[Path] = None,
    workers: int = 1,
    resume: bool = False,
) -> ResultTable:
    """Evaluate the full sweep cross-product.

    With an out_dir, completed rows stream to a journal so an interrupted
    sweep can resume; the journal is removed once the table is written.
    """
    cells = _cell_list(cfg)
    done: dict[tuple, SweepRow] = {}
    journal_path = None
    digest = _config_digest(cfg)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        journal_path = out_dir / "journal.tsv"
        if resume and journal_path.exists():
            lines = journal_path.read_text(encoding="utf-8").splitlines()
            if lines and lines[0] != f"# config {digest}":
                raise ConfigError(
                    "journal was written by a different sweep config; "
                    "remove it or rerun without --resume"
                )
            for line in lines[1:]:
                if line.strip():
                    row = _row_from_json(line.split("\t", 1)[1])
                    done[row.key()] = row
        elif journal_path.exists():
            journal_path.unlink()

    pending = [c for c in cells if c not in done]
    journal = None
    if journal_path is not None:
        mode = "a" if (resume and done) else "w"
        journal = open(journal_path, mode, encoding="utf-8")
        if mode == "w":
            journal.write(f"# config {digest}\n")
            journal.flush()

    try:
        if workers <= 1:
            for cell in pending:
                row = evaluate_cell(cfg, cell)
                done[row.key()] = row
                if journal:
                    journal.write(f"{row.key()}\t{_row_to_json(row)}\n")
                    journal.flush()
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for row in pool.map(_evaluate_cell_star, [(cfg, c) for c in pending]):
                    done[row.key()] = row
                    if journal:
                        journal.write(f"{row.key()}\t{_row_to_json(row)}\n")
                        journal.flush()
    finally:
        if journal:
            journal.close()

    table = ResultTable(rows=list(done.values()), seed=cfg.seed)
    if out_dir is not None:
        table.write_outputs(out_dir)
        journal_path.unlink(missing_ok=True)
    return table


def _evaluate_cell_star(args) -> SweepRow:
    return evaluate_cell(*args)
