"""Command-line entry point.

Commands: train, sample, eval, opt-property, opt-constrained, gen-data.
Configuration is a flat key=value file plus --set overrides; every run
writes a manifest (full resolved config + seed + checkpoint hash) that can
be replayed with --config.
"""

from __future__ import annotations

import os

# DGF_THREADS caps BLAS worker threads; must be set before numpy loads.
if "DGF_THREADS" in os.environ:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["DGF_THREADS"])

import argparse
import hashlib
import sys

import numpy as np

from . import datasets, metrics, nn, rl, trainer
from .chem import QM9_ALPHABET, ZINC_ALPHABET, ExternalScorer, SmilesError, canonical_form
from .flow import DiscreteFlowModel, FlowConfig
from .graphs import GraphError
from .sampler import SampleConfig, generate_batch

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# key -> (type, default, help); bool values serialize as true/false
SCHEMA: dict[str, tuple[type, object, str]] = {
    "profile": (str, "qm9", "alphabet profile: qm9 | zinc | generic"),
    "dataset": (str, "", "training molecules (SMILES) or edge-list blocks"),
    "out": (str, "out", "output directory"),
    "seed": (int, 0, "run seed"),
    "checkpoint": (str, "", "model checkpoint to load"),
    "scorer_cmd": (str, "", "external scorer command line"),
    "model.shift_layers": (int, 12, "modulo-shift layers D"),
    "model.rgcn_layers": (int, 3, "message-passing layers L"),
    "model.embed_dim": (int, 128, "node embedding width"),
    "model.mlp_hidden": (int, 128, "MLP hidden width"),
    "model.tau": (float, 0.1, "straight-through softmax temperature"),
    "train.epochs": (int, 10, "training epochs"),
    "train.batch_size": (int, 0, "batch size (0 = 32 molecules / 16 generic)"),
    "train.lr": (float, 0.001, "learning rate"),
    "train.val_fraction": (float, 0.1, "held-out fraction for NLL tracking"),
    "train.checkpoint_every": (int, 1, "epochs between checkpoints"),
    "train.grad_clip": (float, 10.0, "global gradient-norm clip (0 disables)"),
    "sample.count": (int, 100, "number of graphs to sample"),
    "sample.max_nodes": (int, 0, "node cap (0 = profile default)"),
    "sample.t1": (float, 0.0, "node prior temperature (0 = profile default)"),
    "sample.t2": (float, 0.0, "edge prior temperature (0 = profile default)"),
    "sample.resample_cap": (int, 100, "valency resampling cap per edge"),
    "sample.valency_check": (bool, True, "resample valency-violating edges"),
    "eval.samples": (str, "", "generated-sample file to evaluate"),
    "eval.training_set": (str, "", "reference set (defaults to dataset)"),
    "eval.reconstruction_sample": (int, 0, "training graphs to reconstruct"),
    "ppo.iterations": (int, 200, "PPO iterations"),
    "ppo.lr": (float, 1e-4, "PPO learning rate"),
    "ppo.batch_size": (int, 8, "episodes per iteration"),
    "ppo.clip_eps": (float, 0.2, "PPO clip range"),
    "ppo.snapshot_every": (int, 1, "iterations between old-policy refreshes"),
    "rl.scorer": (str, "atoms", "property scorer: atoms | plogp-proxy | external"),
    "rl.reward": (str, "raw", "reward shaping: raw | exp-logp | qed"),
    "rl.top_k": (int, 10, "tracked top results"),
    "rl.attempts": (int, 200, "optimization attempts per input molecule"),
    "rl.max_remove": (int, 5, "largest BFS suffix removed for initial states"),
    "rl.deltas": (str, "0,0.2,0.4,0.6", "similarity thresholds"),
    "gen.kind": (str, "community-small", "gen-data kind: community-small | molecules"),
    "gen.count": (int, 100, "graphs to synthesize"),
}

PROFILE_DEFAULTS = {
    "qm9": {"max_nodes": 9, "t1": 0.35, "t2": 0.23, "batch": 32},
    "zinc": {"max_nodes": 38, "t1": 0.35, "t2": 0.2, "batch": 32},
    "generic": {"max_nodes": 20, "t1": 1.0, "t2": 0.65, "batch": 16},
}


class ConfigError(ValueError):
    pass


def parse_value(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    typ = SCHEMA[key][0]
    if typ is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def default_config() -> dict:
    return {k: v for k, (_t, v, _h) in SCHEMA.items()}


def load_config(path: str) -> dict:
    cfg = default_config()
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key=value")
            key, _, raw = line.partition("=")
            cfg[key.strip()] = parse_value(key.strip(), raw.strip())
    return cfg


def print_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{key}={val}")
    return "\n".join(lines) + "\n"


def write_manifest(cfg: dict, command: str, out_dir: str, checkpoint: str | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    extra = [f"# command={command}"]
    if checkpoint and os.path.exists(checkpoint):
        digest = hashlib.sha256(open(checkpoint, "rb").read()).hexdigest()
        extra.append(f"# checkpoint_sha256={digest}")
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.write("\n".join(extra) + "\n")
        fh.write(print_config(cfg))


def _alphabet_for(cfg: dict, dataset_path: str | None = None):
    profile = cfg["profile"]
    if profile == "qm9":
        return QM9_ALPHABET, None
    if profile == "zinc":
        return ZINC_ALPHABET, None
    if profile == "generic":
        if dataset_path:
            graphs, alphabet = datasets.load_edge_lists(dataset_path)
            return alphabet, graphs
        from .graphs import generic_alphabet
        return generic_alphabet(1, 1), None
    raise ConfigError(f"unknown profile {profile!r}")


def _load_dataset(cfg: dict, path: str):
    alphabet, pre = _alphabet_for(cfg, path)
    if pre is not None:
        return pre, alphabet, 0
    graphs, skipped = datasets.load_smiles(path, alphabet)
    return graphs, alphabet, skipped


def _sample_config(cfg: dict, alphabet=None) -> SampleConfig:
    prof = PROFILE_DEFAULTS[cfg["profile"]]
    return SampleConfig(
        max_nodes=cfg["sample.max_nodes"] or prof["max_nodes"],
        t1=cfg["sample.t1"] or prof["t1"],
        t2=cfg["sample.t2"] or prof["t2"],
        resample_cap=cfg["sample.resample_cap"],
        seed=cfg["seed"],
        valency_check=cfg["sample.valency_check"],
    )


def _model_config(cfg: dict) -> FlowConfig:
    return FlowConfig(
        num_shift_layers=cfg["model.shift_layers"],
        rgcn_layers=cfg["model.rgcn_layers"],
        embed_dim=cfg["model.embed_dim"],
        mlp_hidden=cfg["model.mlp_hidden"],
        tau=cfg["model.tau"],
    )


def _require(cfg: dict, key: str) -> str:
    if not cfg[key]:
        raise ConfigError(f"config key {key!r} is required for this command")
    return cfg[key]


def _is_molecule_profile(cfg: dict) -> bool:
    return cfg["profile"] in ("qm9", "zinc")


def cmd_train(cfg: dict) -> int:
    path = _require(cfg, "dataset")
    graphs, alphabet, skipped = _load_dataset(cfg, path)
    if skipped:
        print(f"warning: skipped {skipped} unsupported dataset entries", file=sys.stderr)
    if not graphs:
        raise GraphError(f"{path}: no usable graphs")
    model = DiscreteFlowModel(alphabet, _model_config(cfg), seed=cfg["seed"])
    batch = cfg["train.batch_size"] or PROFILE_DEFAULTS[cfg["profile"]]["batch"]
    tc = trainer.TrainConfig(
        epochs=cfg["train.epochs"], batch_size=batch, lr=cfg["train.lr"],
        seed=cfg["seed"], val_fraction=cfg["train.val_fraction"],
        checkpoint_every=cfg["train.checkpoint_every"],
        grad_clip=cfg["train.grad_clip"] or None,
    )
    out = cfg["out"]
    history = trainer.train(model, graphs, tc, out_dir=out)
    ckpt = os.path.join(out, "model.ckpt")
    model.save(ckpt, include_adam=True)
    trainer.write_loss_curve(os.path.join(out, "loss_curve.csv"), history)
    write_manifest(cfg, "train", out, ckpt)
    final = [h for h in history if "held_out" in h]
    if final:
        print(f"trained {tc.epochs} epochs; final held-out NLL {final[-1]['held_out']:.4f}")
    else:
        print(f"trained {tc.epochs} epochs")
    return EXIT_OK


def cmd_sample(cfg: dict) -> int:
    model = DiscreteFlowModel.load(_require(cfg, "checkpoint"))
    sc = _sample_config(cfg)
    episodes = generate_batch(model, sc, cfg["sample.count"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    if _is_molecule_profile(cfg):
        with open(os.path.join(out, "samples.smi"), "w") as fh:
            for ep in episodes:
                fh.write(canonical_form(ep.graph, model.alphabet) + "\n")
    else:
        datasets.save_edge_lists(os.path.join(out, "samples.edges"), [ep.graph for ep in episodes],
                                 model.alphabet)
    with open(os.path.join(out, "episodes.csv"), "w") as fh:
        fh.write("index,logp,termination\n")
        for i, ep in enumerate(episodes):
            fh.write(f"{i},{ep.logp_total():.10g},{ep.termination}\n")
    write_manifest(cfg, "sample", out, cfg["checkpoint"])
    print(f"wrote {len(episodes)} samples to {out}")
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    train_path = cfg["eval.training_set"] or _require(cfg, "dataset")
    if _is_molecule_profile(cfg):
        alphabet, _ = _alphabet_for(cfg)
        samples_path = _require(cfg, "eval.samples")
        samples, skipped = datasets.load_smiles(samples_path, alphabet)
        training, _sk = datasets.load_smiles(train_path, alphabet)
        model = None
        recon = None
        if cfg["checkpoint"]:
            model = DiscreteFlowModel.load(cfg["checkpoint"])
            n = cfg["eval.reconstruction_sample"]
            if n:
                rng = np.random.default_rng(cfg["seed"])
                recon = [training[i] for i in rng.choice(len(training), size=min(n, len(training)),
                                                         replace=False)]
        prof = PROFILE_DEFAULTS[cfg["profile"]]
        report = metrics.molecule_metrics(samples, training, alphabet, model=model,
                                          reconstruction_sample=recon,
                                          metadata={"count": len(samples), "seed": cfg["seed"],
                                                    "skipped": skipped,
                                                    "t1": cfg["sample.t1"] or prof["t1"],
                                                    "t2": cfg["sample.t2"] or prof["t2"]})
    else:
        samples, alphabet = datasets.load_edge_lists(_require(cfg, "eval.samples"))
        training, _a = datasets.load_edge_lists(train_path)
        report = metrics.MetricReport(metadata={"count": len(samples), "seed": cfg["seed"]})
        matched = samples
        if len(samples) > len(training):
            matched = metrics.node_distribution_match(samples, len(training),
                                                      [g.num_nodes for g in training])
        for kind in ("degree", "cluster", "orbit"):
            report.add(f"mmd_{kind}", metrics.mmd(matched, training, kind))
            report.add(f"mmd_{kind}_1024", metrics.mmd(samples, training, kind))
    with open(os.path.join(out, "metrics.txt"), "w") as fh:
        fh.write(report.to_text() + "\n")
    with open(os.path.join(out, "metrics.kv"), "w") as fh:
        fh.write(report.to_kv() + "\n")
    write_manifest(cfg, "eval", out, cfg["checkpoint"] or None)
    print(report.to_text())
    return EXIT_OK


def _build_scorer(cfg: dict):
    name = cfg["rl.scorer"]
    if name in ("atoms", "plogp-proxy"):
        return name, None
    if name == "external":
        handle = ExternalScorer(_require(cfg, "scorer_cmd"))
        return handle, handle
    raise ConfigError(f"unknown scorer {name!r}")


def _reward_hook(cfg: dict, scorer, alphabet):
    from .chem import score as chem_score

    base = lambda g: chem_score(g, scorer, alphabet)
    shaping = cfg["rl.reward"]
    if shaping == "raw":
        return base
    if shaping == "exp-logp":
        return rl.exp_logp_reward(base)
    if shaping == "qed":
        return rl.scaled_qed_reward(base)
    raise ConfigError(f"unknown reward shaping {shaping!r}")


def cmd_opt_property(cfg: dict) -> int:
    model = DiscreteFlowModel.load(_require(cfg, "checkpoint"))
    scorer, handle = _build_scorer(cfg)
    try:
        penalties = {}
        if handle is not None:
            penalties = {"strain_penalty": rl.external_penalty(handle, model.alphabet, "SS"),
                         "filter_penalty": rl.external_penalty(handle, model.alphabet, "FILTER")}
        spec = rl.RewardSpec(property=_reward_hook(cfg, scorer, model.alphabet), **penalties)
        ppo = rl.PPOConfig(clip_eps=cfg["ppo.clip_eps"], iterations=cfg["ppo.iterations"],
                           lr=cfg["ppo.lr"], batch_size=cfg["ppo.batch_size"],
                           snapshot_every=cfg["ppo.snapshot_every"])
        sc = _sample_config(cfg)
        log = rl.finetune_property(model, spec, ppo, sc, top_k=cfg["rl.top_k"])
    finally:
        if handle is not None:
            handle.close()
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    ckpt = os.path.join(out, "model_rl.ckpt")
    model.save(ckpt)
    with open(os.path.join(out, "top_scores.csv"), "w") as fh:
        fh.write("score,identity\n")
        for s, ident in log.top:
            fh.write(f"{s:.6g},{ident}\n")
    with open(os.path.join(out, "score_curve.csv"), "w") as fh:
        fh.write("iteration,mean_score\n")
        for i, s in enumerate(log.iteration_scores):
            fh.write(f"{i},{s:.6g}\n")
    write_manifest(cfg, "opt-property", out, ckpt)
    print(f"finished {cfg['ppo.iterations']} iterations; "
          f"best score {log.top[0][0]:.4f}" if log.top else "no results")
    return EXIT_OK


def cmd_opt_constrained(cfg: dict) -> int:
    model = DiscreteFlowModel.load(_require(cfg, "checkpoint"))
    graphs, alphabet, _sk = _load_dataset(cfg, _require(cfg, "dataset"))
    scorer, handle = _build_scorer(cfg)
    try:
        ppo = rl.PPOConfig(clip_eps=cfg["ppo.clip_eps"], iterations=cfg["ppo.iterations"],
                           lr=cfg["ppo.lr"], batch_size=cfg["ppo.batch_size"],
                           snapshot_every=cfg["ppo.snapshot_every"])
        sc = _sample_config(cfg)
        deltas = tuple(float(x) for x in cfg["rl.deltas"].split(","))
        results, summary = rl.finetune_constrained(model, graphs, scorer, ppo, sc,
                                                   attempts=cfg["rl.attempts"], deltas=deltas)
    finally:
        if handle is not None:
            handle.close()
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    rl.write_constrained_table(os.path.join(out, "constrained.csv"), results)
    with open(os.path.join(out, "constrained_summary.txt"), "w") as fh:
        for delta, entry in summary.items():
            fh.write(f"delta={delta} " + " ".join(f"{k}={v:.4f}" for k, v in entry.items()) + "\n")
    write_manifest(cfg, "opt-constrained", out, cfg["checkpoint"])
    for delta, entry in summary.items():
        print(f"delta={delta}: success_rate={entry['success_rate']:.1f}%")
    return EXIT_OK


def cmd_gen_data(cfg: dict) -> int:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    rng = np.random.default_rng(cfg["seed"])
    if cfg["gen.kind"] == "community-small":
        graphs = datasets.gen_community_small(cfg["gen.count"], rng)
        from .graphs import generic_alphabet
        path = os.path.join(out, "community_small.edges")
        datasets.save_edge_lists(path, graphs, generic_alphabet(1, 1))
    elif cfg["gen.kind"] == "molecules":
        alphabet, _ = _alphabet_for(cfg)
        prof = PROFILE_DEFAULTS[cfg["profile"]]
        graphs = datasets.random_molecules(cfg["gen.count"], alphabet, rng,
                                           max_nodes=prof["max_nodes"])
        path = os.path.join(out, "molecules.smi")
        datasets.save_smiles(path, graphs, alphabet)
    else:
        raise ConfigError(f"unknown gen.kind {cfg['gen.kind']!r}")
    write_manifest(cfg, "gen-data", out)
    print(f"wrote {len(graphs)} graphs to {path}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "opt-property": cmd_opt_property,
    "opt-constrained": cmd_opt_constrained,
    "gen-data": cmd_gen_data,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgflow",
                                     description="Discrete-flow graph generation")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key")
    parser.add_argument("--scorer-cmd", help="shorthand for --set scorer_cmd=...")
    return parser


def resolve_config(args) -> dict:
    cfg = load_config(args.config) if args.config else default_config()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        cfg[key.strip()] = parse_value(key.strip(), raw.strip())
    if args.scorer_cmd:
        cfg["scorer_cmd"] = args.scorer_cmd
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, GraphError, SmilesError, nn.CheckpointError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except trainer.TrainingAborted as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as err:
        from . import autodiff as ad

        if isinstance(err, ad.AutodiffError):
            print(f"numeric failure: {err}", file=sys.stderr)
            return EXIT_NUMERIC
        raise


if __name__ == "__main__":
    sys.exit(main())
