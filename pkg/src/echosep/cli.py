"""Command line entry point: ``echosep <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import acoustics, corpus, echomodel, emsep, harness, metrics, musep, nmfcore
from .spectral import StftConfig, stft


def _config(args):
    cfg = harness.ExperimentConfig.load(args.config) if getattr(args, "config", None) else harness.ExperimentConfig()
    if getattr(args, "pairs", None) is not None:
        cfg.pair_subset = None if args.pairs == 0 else args.pairs
    if getattr(args, "algo", None):
        cfg.algorithm = args.algo
    if getattr(args, "dict", None):
        cfg.dictionary_mode = args.dict
    if getattr(args, "modes", None):
        cfg.channel_modes = list(args.modes)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "corpus", None):
        cfg.corpus = {"root": args.corpus}
    return cfg.validate()


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(harness._json_safe(doc), indent=2))


def cmd_train_dict(args):
    cfg = _config(args)
    groups = harness.load_groups(cfg)
    harness.split_corpus(groups, cfg.test_speakers)
    dicts = harness.build_dictionaries(cfg, groups)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.dictionary_mode == "universal":
        dicts[0].save(out / "universal.npz")
    else:
        for s, d in zip(cfg.test_speakers, dicts):
            d.save(out / f"{s}.npz")
    _write_json(out / "corpus_manifest.json", corpus.corpus_manifest(groups))
    print(f"wrote dictionaries to {out}")


def cmd_simulate(args):
    cfg = _config(args)
    groups = harness.load_groups(cfg)
    tests = harness.split_corpus(groups, cfg.test_speakers)
    scenario, valid = harness.make_scenario(cfg)
    pairs = harness.select_pairs(cfg, valid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario.save(out / "scenario.json")
    n = min(len(c.samples) for c in tests)
    order = 0 if cfg.mixture == "anechoic" else cfg.max_order
    fs = scenario.room.sample_rate
    for i, pair in enumerate(pairs):
        mix, images = acoustics.render_mixture(scenario, [c.samples[:n] for c in tests], order, source_ids=pair)
        wavfile.write(str(out / f"pair{i:03d}_mix.wav"), int(fs), mix.T.astype(np.float32))
        wavfile.write(str(out / f"pair{i:03d}_ref.wav"), int(fs), images[:, 0].T.astype(np.float32))
    _write_json(out / "pairs.json", {"pairs": [list(map(int, p)) for p in pairs], "config": cfg.to_dict()})
    print(f"rendered {len(pairs)} mixtures to {out}")


def _read_multi(path):
    rate, x = wavfile.read(str(path))
    x = x.astype(np.float64) / (32768.0 if x.dtype == np.int16 else 1.0)
    return np.atleast_2d(x.T), rate


def cmd_separate(args):
    sim = Path(args.sim)
    scenario = acoustics.Scenario.load(sim / "scenario.json")
    pairs = json.loads((sim / "pairs.json").read_text())["pairs"]
    pair = tuple(pairs[args.pair])
    mix, fs = _read_multi(sim / f"pair{args.pair:03d}_mix.wav")
    stft_cfg = StftConfig()
    Y = stft(mix, stft_cfg, fs)
    paths = args.dictionaries
    D = [nmfcore.Dictionary.load(p).D for p in paths]
    if len(D) == 1:
        D = D * 2
    mode = harness.canonical_mode(args.modes[0] if args.modes else "K=1")
    ch = echomodel.channels_for_mode(mode, scenario, pair, stft_cfg.n_freq, stft_cfg.frame_size, args.seed or 0)
    if args.algo == "em":
        res = emsep.separate_em(Y, ch, D, emsep.EmRunConfig(mode, seed=args.seed or 0))
    else:
        gamma = args.gamma if args.gamma is not None else nmfcore.default_gamma(mode)
        res = musep.separate_mu(Y, ch, D, musep.MuRunConfig(mode, gamma, seed=args.seed or 0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(out / "estimates.wav"), int(fs), res.estimates.T.astype(np.float32))
    _write_json(out / "run.json", {"algorithm": args.algo, "channel_mode": mode, "pair": list(pair),
                                   "cost": res.cost.tolist()})
    print(f"cost {res.cost[0]:.6g} -> {res.cost[-1]:.6g}; estimates in {out / 'estimates.wav'}")


def cmd_evaluate(args):
    est, _ = _read_multi(args.estimates)
    ref, _ = _read_multi(args.references)
    ev = metrics.bss_eval(est, ref)
    doc = {"sdr": ev.sdr.tolist(), "sir": ev.sir.tolist(), "permutation": ev.permutation.tolist()}
    if args.out:
        _write_json(args.out, doc)
    print(json.dumps(harness._json_safe(doc)))


def cmd_experiment(args):
    cfg = _config(args)
    groups = harness.load_groups(cfg)
    rows = harness.run_experiment(cfg, jobs=args.jobs, groups=groups)
    agg = harness.aggregate(rows)
    harness.emit_report(rows, agg, args.out, harness.experiment_manifest(cfg, groups))
    for a in agg:
        print(f"{a['algorithm']} {a['dictionary_mode']:9s} {a['channel_mode']:9s} "
              f"SDR {a['sdr_median']:7.2f} dB  SIR {a['sir_median']:7.2f} dB")


def cmd_report(args):
    rows = harness.read_results(args.results)
    agg = harness.aggregate(rows)
    out = Path(args.out or Path(args.results).parent)
    _write_json(out / "summary.json", agg)
    for a in agg:
        print(f"{a['algorithm']} {a['dictionary_mode']:9s} {a['channel_mode']:9s} "
              f"SDR {a['sdr_median']:7.2f} dB  SIR {a['sir_median']:7.2f} dB")


def build_parser():
    p = argparse.ArgumentParser(prog="echosep", description="Echo-aware multichannel NMF separation experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--pairs", type=int, help="number of source pairs (0 = all)")
        sp.add_argument("--algo", choices=["mu", "em"])
        sp.add_argument("--dict", choices=["universal", "speaker"])
        sp.add_argument("--modes", nargs="+", help="channel modes: learn anechoic no-echoes K=1 ...")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--corpus", help="WAV corpus root (speaker/utterance.wav)")
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--jobs", type=int, default=1)

    common(sub.add_parser("train-dict", help="train dictionaries"))
    common(sub.add_parser("simulate", help="render mixtures for the selected pairs"))
    common(sub.add_parser("experiment", help="full sweep with report"))

    sp = sub.add_parser("separate", help="separate one rendered mixture")
    sp.add_argument("--sim", required=True, help="directory written by 'simulate'")
    sp.add_argument("--pair", type=int, default=0)
    sp.add_argument("--dictionaries", nargs="+", required=True, help="one npz (universal) or one per source")
    sp.add_argument("--algo", choices=["mu", "em"], default="mu")
    sp.add_argument("--modes", nargs=1)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("evaluate", help="SDR/SIR of estimates against references")
    sp.add_argument("--estimates", required=True)
    sp.add_argument("--references", required=True)
    sp.add_argument("--out")

    sp = sub.add_parser("report", help="recompute summary.json from results.csv")
    sp.add_argument("--results", required=True)
    sp.add_argument("--out")
    return p


COMMANDS = {
    "train-dict": cmd_train_dict,
    "simulate": cmd_simulate,
    "separate": cmd_separate,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except harness.ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    return 0
