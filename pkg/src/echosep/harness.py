"""
Experiment orchestration: scenarios, dictionaries, separation sweeps and
reports.

One experiment fixes a room, an array, a set of sampled source positions and
two test utterances (one per test speaker). For every selected source pair
it renders the mixture once and runs the chosen algorithm under every
requested channel mode. Results are one :class:`ResultRow` per
(pair, mode), in pair order, whatever the number of worker processes.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, acoustics, corpus, echomodel, emsep, metrics, musep, nmfcore
from .spectral import StftConfig, stft

log = logging.getLogger(__name__)

ALL_MODES = ["learn", "anechoic", "no-echoes", "K=1", "K=2", "K=3", "K=4", "K=5", "K=6"]
DEFAULT_ITERATIONS = {"mu": 200, "em": 300}
DEFAULT_ATOMS = {"universal": 10, "speaker": 20}


class ConfigError(ValueError):
    def __init__(self, problems):
        super().__init__("invalid experiment config:\n  " + "\n  ".join(problems))
        self.problems = problems


def canonical_mode(mode):
    """``"learn"``, ``"anechoic"``, ``"no-echoes"`` or ``"K=<k>"`` (K=0 is no-echoes)."""
    if mode in ("learn", "anechoic", "no-echoes"):
        return mode
    k = echomodel.parse_k(mode)
    if k < 0:
        raise ValueError(f"negative echo count in {mode!r}")
    return "no-echoes" if k == 0 else f"K={k}"


@dataclass
class ExperimentConfig:
    room: dict = None  # Room.to_dict(); default 7-wall room
    array: list = None  # mic positions; default triangle near a corner
    n_sources: int = 40
    dist_range: tuple = (2.5, 4.0)
    min_pair_dist: float = 1.0
    algorithm: str = "mu"
    dictionary_mode: str = "universal"
    channel_modes: list = field(default_factory=lambda: list(ALL_MODES))
    gamma: dict = field(default_factory=dict)  # per-mode overrides
    iterations: int = None  # 200 for mu, 300 for em
    seed: int = 0
    pair_subset: int = 10  # None = every valid pair
    mixture: str = "reverberant"  # or "anechoic"
    max_order: int = 10
    duration_s: float = 8.0
    corpus: dict = field(default_factory=lambda: {"synthetic": {"n_speakers": 12, "utterances": 4, "seed": 0}})
    test_speakers: tuple = ("f00", "m00")
    atoms: int = None  # per speaker; 10 universal, 20 speaker
    dict_iterations: int = 400
    noise_floor: float = 1e-5
    frame_size: int = 2048
    hop: int = 1024

    def validate(self):
        problems = []
        if self.algorithm not in ("mu", "em"):
            problems.append(f"algorithm must be 'mu' or 'em', got {self.algorithm!r}")
        if self.dictionary_mode not in ("universal", "speaker"):
            problems.append(f"dictionary_mode must be 'universal' or 'speaker', got {self.dictionary_mode!r}")
        if not self.channel_modes:
            problems.append("channel_modes is empty")
        for m in self.channel_modes:
            try:
                k = canonical_mode(m)
                if k.startswith("K=") and int(k[2:]) > 6:
                    problems.append(f"channel mode {m!r}: K > 6")
            except ValueError:
                problems.append(f"unknown channel mode {m!r}")
        if self.mixture not in ("reverberant", "anechoic"):
            problems.append(f"mixture must be 'reverberant' or 'anechoic', got {self.mixture!r}")
        if self.n_sources < 2:
            problems.append("n_sources must be >= 2")
        if self.pair_subset is not None and self.pair_subset < 1:
            problems.append("pair_subset must be >= 1")
        if self.iterations is not None and self.iterations < 1:
            problems.append("iterations must be >= 1")
        if len(self.test_speakers) != 2:
            problems.append("exactly two test speakers are needed")
        if not self.duration_s > 0:
            problems.append("duration_s must be positive")
        if set(self.corpus) - {"synthetic", "root"} or len(self.corpus) != 1:
            problems.append("corpus must be {'synthetic': {...}} or {'root': path}")
        for k, g in self.gamma.items():
            if not g >= 0:
                problems.append(f"gamma for {k!r} must be non-negative")
        if problems:
            raise ConfigError(problems)
        return self

    @property
    def modes(self):
        return [canonical_mode(m) for m in self.channel_modes]

    @property
    def n_iterations(self):
        return self.iterations or DEFAULT_ITERATIONS[self.algorithm]

    def gamma_for(self, mode):
        mode = canonical_mode(mode)
        if mode in self.gamma:
            return float(self.gamma[mode])
        if self.algorithm == "em" or self.dictionary_mode == "speaker":
            return 0.0
        return nmfcore.default_gamma(mode)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["dist_range"] = list(self.dist_range)
        d["test_speakers"] = list(self.test_speakers)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in unknown])
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ResultRow:
    pair_id: int
    source_a: int
    source_b: int
    algorithm: str
    dictionary_mode: str
    channel_mode: str
    mixture: str
    gamma: float
    seed: int
    sdr_0: float = math.nan
    sdr_1: float = math.nan
    sir_0: float = math.nan
    sir_1: float = math.nan
    permutation: str = ""
    cost_first: float = math.nan
    cost_last: float = math.nan
    status: str = "ok"
    error: str = ""
    runtime_s: float = field(default=math.nan, compare=False)


CSV_COLUMNS = [f.name for f in dataclasses.fields(ResultRow) if f.name != "runtime_s"]


# ---------------------------------------------------------------------------
# data preparation

_DICT_CACHE = {}


def load_groups(config):
    spec = config.corpus
    if "root" in spec:
        groups, rejects = corpus.load_corpus(spec["root"])
        for path, why in rejects:
            log.warning("rejected %s: %s", path, why)
        return groups
    opts = {"duration_s": config.duration_s, **spec["synthetic"]}
    return corpus.synthetic_corpus(**opts)


def split_corpus(groups, test_speakers):
    """Held-out test clips (last utterance of each test speaker) and training clips."""
    missing = [s for s in test_speakers if s not in groups]
    if missing:
        raise ConfigError([f"test speaker {s!r} not in corpus" for s in missing])
    tests = []
    for s in test_speakers:
        if len(groups[s]) < 2:
            raise ConfigError([f"test speaker {s!r} needs at least two utterances"])
        tests.append(groups[s][-1])
    return tests


def _power(clips, cfg):
    x = np.concatenate([c.samples for c in clips])
    return np.abs(stft(x, cfg, clips[0].sample_rate).data) ** 2


def build_dictionaries(config, groups):
    """Per-source dictionaries, in test-speaker order.

    ``universal``: one dictionary over every non-test speaker, shared by both
    sources. ``speaker``: each test speaker's own utterances minus the
    held-out one.
    """
    stft_cfg = StftConfig(config.frame_size, config.hop)
    atoms = config.atoms or DEFAULT_ATOMS[config.dictionary_mode]
    digest = corpus.corpus_manifest(groups)["sha256"]
    key = (digest, config.dictionary_mode, tuple(config.test_speakers), atoms,
           config.dict_iterations, config.seed, config.frame_size, config.hop)
    if key in _DICT_CACHE:
        return _DICT_CACHE[key]
    if config.dictionary_mode == "universal":
        names = [s for s in groups if s not in config.test_speakers]
        if not names:
            raise ConfigError(["universal dictionary needs training speakers besides the test speakers"])
        spectra = [_power(groups[s], stft_cfg) for s in names]
        d = nmfcore.train_dictionary(spectra, atoms, config.dict_iterations, config.seed, names)
        out = [d, d]
    else:
        out = []
        for i, s in enumerate(config.test_speakers):
            spectra = [_power(groups[s][:-1], stft_cfg)]
            out.append(nmfcore.train_dictionary(spectra, atoms, config.dict_iterations, config.seed + 100 * i, [s]))
    _DICT_CACHE[key] = out
    return out


def select_pairs(config, scenario_pairs):
    """Seeded subset of the valid pairs, in ascending order."""
    if config.pair_subset is None or config.pair_subset >= len(scenario_pairs):
        return list(scenario_pairs)
    rng = np.random.default_rng([config.seed, 1])
    idx = np.sort(rng.choice(len(scenario_pairs), config.pair_subset, replace=False))
    return [scenario_pairs[i] for i in idx]


def make_scenario(config):
    room = acoustics.Room.from_dict(config.room) if config.room else acoustics.default_room()
    mics = None if config.array is None else np.asarray(config.array, dtype=float)
    return acoustics.sample_scenarios(room, config.n_sources, tuple(config.dist_range), config.min_pair_dist,
                                      config.seed, mic_positions=mics)


# ---------------------------------------------------------------------------
# one pair


def run_pair(config, scenario, pair_id, pair, signals, dictionaries):
    """Render one mixture and separate it under every channel mode."""
    stft_cfg = StftConfig(config.frame_size, config.hop)
    fs = scenario.room.sample_rate
    n = min(len(s) for s in signals)
    order = 0 if config.mixture == "anechoic" else config.max_order
    mix, images = acoustics.render_mixture(scenario, [s[:n] for s in signals], order, source_ids=pair)
    Y = stft(mix, stft_cfg, fs)
    refs = images[:, 0]
    D = [d.D for d in dictionaries]
    rows = []
    for mode in config.modes:
        seed = config.seed * 100_003 + pair_id
        row = ResultRow(pair_id, pair[0], pair[1], config.algorithm, config.dictionary_mode, mode,
                        config.mixture, config.gamma_for(mode), seed)
        t0 = time.perf_counter()
        try:
            ch = echomodel.channels_for_mode(mode, scenario, pair, stft_cfg.n_freq, config.frame_size, seed)
            if config.algorithm == "mu":
                cfg = musep.MuRunConfig(mode, row.gamma, config.n_iterations, config.dictionary_mode, seed)
                res = musep.separate_mu(Y, ch, D, cfg)
            else:
                cfg = emsep.EmRunConfig(mode, config.n_iterations, config.noise_floor, seed)
                res = emsep.separate_em(Y, ch, D, cfg)
            ev = metrics.bss_eval(res.estimates, refs)
            row.sdr_0, row.sdr_1 = (float(v) for v in ev.sdr)
            row.sir_0, row.sir_1 = (float(v) for v in ev.sir)
            row.permutation = "-".join(str(int(p)) for p in ev.permutation)
            row.cost_first, row.cost_last = float(res.cost[0]), float(res.cost[-1])
        except (ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
            row.status, row.error = "error", f"{type(exc).__name__}: {exc}"
            log.warning("pair %d mode %s failed: %s", pair_id, mode, exc)
        row.runtime_s = time.perf_counter() - t0
        rows.append(row)
    return rows


def _run_pair_star(args):
    return run_pair(*args)


def run_experiment(config, jobs=1, groups=None):
    """Run every selected pair under every channel mode.

    Parameters
    ----------
    config : ExperimentConfig
    jobs : int
        Worker processes; the row order does not depend on it.
    groups : dict, optional
        Pre-loaded corpus (speaker -> clips); read from ``config.corpus``
        otherwise.

    Returns
    -------
    list of ResultRow
    """
    config.validate()
    if groups is None:
        groups = load_groups(config)
    tests = split_corpus(groups, config.test_speakers)
    dictionaries = build_dictionaries(config, groups)
    scenario, valid = make_scenario(config)
    pairs = select_pairs(config, valid)
    signals = [c.samples for c in tests]
    tasks = [(config, scenario, i, p, signals, dictionaries) for i, p in enumerate(pairs)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            chunks = list(pool.map(_run_pair_star, tasks))
    else:
        chunks = [_run_pair_star(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


# ---------------------------------------------------------------------------
# aggregation and reports


def _lower_quantiles(values):
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan, math.nan
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="lower")
    return float(med), float(q1), float(q3)


def aggregate(results):
    """Median (lower median for even counts) and quartiles per group.

    Per-source values of every successful row are pooled, so ten pairs give
    twenty SDR and twenty SIR samples per (algorithm, dictionary, mode).
    """
    groups = {}
    for r in results:
        key = (r.algorithm, r.dictionary_mode, r.channel_mode)
        g = groups.setdefault(key, {"sdr": [], "sir": [], "n_rows": 0, "n_errors": 0})
        g["n_rows"] += 1
        if r.status != "ok":
            g["n_errors"] += 1
            continue
        g["sdr"] += [r.sdr_0, r.sdr_1]
        g["sir"] += [r.sir_0, r.sir_1]
    out = []
    for (algo, dmode, cmode), g in groups.items():
        entry = {"algorithm": algo, "dictionary_mode": dmode, "channel_mode": cmode,
                 "n_rows": g["n_rows"], "n_errors": g["n_errors"]}
        for m in ("sdr", "sir"):
            med, q1, q3 = _lower_quantiles(g[m])
            entry.update({f"{m}_median": med, f"{m}_q1": q1, f"{m}_q3": q3})
        out.append(entry)
    return out


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6f}"
    return str(v)


def results_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_results(path):
    """Parse a results.csv back into rows (runtime is not stored there)."""
    types = {f.name: f.type for f in dataclasses.fields(ResultRow)}
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for k, v in rec.items():
                t = types[k]
                kw[k] = int(v) if t in (int, "int") else float(v) if t in (float, "float") else v
            rows.append(ResultRow(**kw))
    return rows


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def emit_report(results, aggregates, path, manifest=None):
    """Write results.csv, summary.json, distributions/*.csv and manifest.json.

    Wall-clock runtimes go to the manifest only, so results.csv is a pure
    function of the configuration.
    """
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        (path / "results.csv").write_text(results_csv(results))
        (path / "summary.json").write_text(json.dumps(_json_safe(aggregates), indent=2))
        dist = path / "distributions"
        dist.mkdir(exist_ok=True)
        by_key = {}
        for r in results:
            if r.status == "ok":
                by_key.setdefault((r.algorithm, r.dictionary_mode, r.channel_mode), []).append(r)
        for (a, d, m), rows in by_key.items():
            lines = ["pair_id,source,sdr,sir"]
            for r in rows:
                lines += [f"{r.pair_id},0,{_fmt(r.sdr_0)},{_fmt(r.sir_0)}", f"{r.pair_id},1,{_fmt(r.sdr_1)},{_fmt(r.sir_1)}"]
            (dist / f"{a}_{d}_{m.replace('=', '')}.csv").write_text("\n".join(lines) + "\n")
        doc = dict(manifest or {})
        doc["runtime_s"] = [
            {"pair_id": r.pair_id, "channel_mode": r.channel_mode, "runtime_s": r.runtime_s} for r in results
        ]
        doc["version"] = __version__
        (path / "manifest.json").write_text(json.dumps(_json_safe(doc), indent=2))
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def experiment_manifest(config, groups=None):
    doc = {"config": config.to_dict()}
    if groups is not None:
        doc["corpus"] = corpus.corpus_manifest(groups)
        doc["test_utterances"] = {s: groups[s][-1].utterance_id for s in config.test_speakers}
    return doc
