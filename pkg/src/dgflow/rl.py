"""Policy-gradient fine-tuning of a trained flow.

Generation is treated as an MDP: states are intermediate sub-graphs, actions
are node/edge decisions, and the final reward (property score minus strain
and filter penalties) is distributed backwards with a discount; edge steps
that violated valency get an extra -1. Updates use the PPO clipped
surrogate over action-probability ratios, with advantages equal to suffix
sums of future rewards (no learned baseline).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import nn
from .chem import canonical_form, morgan_fingerprint, score, tanimoto
from .flow import DiscreteFlowModel, build_condition_batch, _group_features, _invert_group
from .graphs import LabeledGraph, bfs_order
from .sampler import Episode, SampleConfig, episode_record, generate_batch, run_episodes

__all__ = [
    "RewardSpec",
    "PPOConfig",
    "assign_rewards",
    "ppo_clip_term",
    "ppo_loss",
    "finetune_property",
    "constrained_init",
    "finetune_constrained",
    "exp_logp_reward",
    "scaled_qed_reward",
]

PropertyHook = Callable[[LabeledGraph], float]


def exp_logp_reward(logp_scorer: PropertyHook) -> PropertyHook:
    """exp(logP/3 - 4) shaping for penalized-logP optimization."""
    return lambda g: math.exp(logp_scorer(g) / 3.0 - 4.0)


def scaled_qed_reward(qed_scorer: PropertyHook) -> PropertyHook:
    """2 * QED shaping for drug-likeness optimization."""
    return lambda g: 2.0 * qed_scorer(g)


def external_penalty(scorer, alphabet, verb: str) -> PropertyHook:
    """Strain/filter penalty served by an external scorer process: the SS and
    FILTER verbs reply 0/1, which enters the final reward subtractively."""
    from .chem import write_smiles as _write

    return lambda g: scorer.score(_write(g, alphabet), verb=verb)


def _zero(_g: LabeledGraph) -> float:
    return 0.0


@dataclass(frozen=True)
class RewardSpec:
    """Final reward R = property - strain_penalty - filter_penalty; each step
    t of T receives gamma^(T-t) * R plus step_penalty once if it violated
    valency."""

    property: PropertyHook
    strain_penalty: PropertyHook = _zero
    filter_penalty: PropertyHook = _zero
    step_penalty: float = -1.0
    gamma: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")

    def final_reward(self, g: LabeledGraph) -> float:
        return self.property(g) - self.strain_penalty(g) - self.filter_penalty(g)


@dataclass(frozen=True)
class PPOConfig:
    clip_eps: float = 0.2
    iterations: int = 200
    lr: float = 1e-4
    batch_size: int = 8            # 16 for constrained optimization
    snapshot_every: int = 1        # iterations between old-policy refreshes
    grad_clip: float | None = 10.0

    def __post_init__(self):
        if not (0.0 < self.clip_eps < 1.0):
            raise ValueError("clip_eps must be in (0, 1)")


def assign_rewards(episode: Episode, spec: RewardSpec,
                   final_reward: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-step rewards and advantages (suffix sums of future rewards)."""
    steps = episode.steps
    t_total = len(steps)
    if final_reward is None:
        final_reward = spec.final_reward(episode.graph)
    rewards = np.zeros(t_total)
    for t, s in enumerate(steps):
        rewards[t] = (spec.gamma ** (t_total - 1 - t)) * final_reward
        if s.resamples > 0 or s.forced:
            rewards[t] += spec.step_penalty
    advantages = np.cumsum(rewards[::-1])[::-1].copy()
    return rewards, advantages


def ppo_clip_term(ratio: float, advantage: float, clip_eps: float) -> float:
    """min(r*A, clip(r, 1-eps, 1+eps)*A) for one step; unit-testable."""
    clipped = min(max(ratio, 1.0 - clip_eps), 1.0 + clip_eps)
    return min(ratio * advantage, clipped * advantage)


def ppo_loss(model: DiscreteFlowModel, episodes: list[Episode],
             advantages: list[np.ndarray], clip_eps: float,
             t1: float = 1.0, t2: float = 1.0) -> ad.Tensor:
    """Negative clipped surrogate over all steps of the episodes.

    Old-policy action probabilities are the behavior probabilities the
    episodes were collected with; new-policy probabilities come from
    replaying each conditioning state through the current model at the same
    temperatures.
    """
    alphabet = model.alphabet
    k, c1 = alphabet.num_node_types, alphabet.num_edge_types + 1
    records = [episode_record(ep, alphabet.num_edge_types) for ep in episodes]
    batch = build_condition_batch(records, alphabet)
    adv = np.concatenate(advantages)
    old_logp = np.array([s.logp_sampling for ep in episodes for s in ep.steps])
    if np.any(old_logp == -np.inf) or np.any(np.exp(old_logp) == 0.0):
        raise ValueError("old policy assigns zero probability to a taken action")
    weights = np.concatenate([np.full(len(ep.steps), 1.0 / len(episodes)) for ep in episodes])

    node_feats, edge_feats, groups = _group_features(model, batch, training=False)
    alpha = model.store.params["prior.alpha"]
    beta = model.store.params["prior.beta"]
    total = ad.constant(0.0)
    for head, feats, rows, width, logits, temp in (
        ("node", node_feats, groups["node_rows"], k, alpha * t1, None),
        ("edge", edge_feats, groups["edge_rows"], c1, beta, t2),
    ):
        if feats is None or not len(rows):
            continue
        if temp is not None:
            logits = logits * (1.0 / temp)
        u, _z = _invert_group(model, feats, head, batch["tokens"][rows], width,
                              mode="straight_through")
        probs = ad.softmax(ad.reshape(logits, (1, width)), axis=-1)
        p_new = ad.tsum(u * probs, axis=1)
        ratio = p_new * ad.constant(np.exp(-old_logp[rows]))
        a = ad.constant(adv[rows])
        term = ad.minimum(ratio * a, ad.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * a)
        total = total + ad.tsum(term * ad.constant(weights[rows]))
    return -total


@dataclass
class OptimizationLog:
    iteration_scores: list[float] = field(default_factory=list)
    top: list[tuple[float, str]] = field(default_factory=list)   # (score, identity)

    def offer(self, score_value: float, identity: str, top_k: int) -> None:
        if any(ident == identity for _s, ident in self.top):
            return
        self.top.append((score_value, identity))
        self.top.sort(key=lambda p: -p[0])
        del self.top[top_k:]


def finetune_property(model: DiscreteFlowModel, spec: RewardSpec, ppo: PPOConfig,
                      sample_config: SampleConfig, top_k: int = 10,
                      identity: Callable[[LabeledGraph], str] | None = None) -> OptimizationLog:
    """PPO fine-tuning toward a property score; tracks the top-K distinct
    results. The model is updated in place."""
    if identity is None:
        identity = lambda g: canonical_form(g, model.alphabet)
    log = OptimizationLog()
    rng = np.random.default_rng(sample_config.seed)
    episodes: list[Episode] = []
    advantages: list[np.ndarray] = []
    for it in range(ppo.iterations):
        if it % ppo.snapshot_every == 0:
            # refresh the old policy: collect from the current model, whose
            # recorded behavior probabilities become the ratio denominators
            batch_cfg = replace(sample_config, seed=int(rng.integers(0, 2**31 - 1)))
            episodes = generate_batch(model, batch_cfg, ppo.batch_size)
            advantages = []
            scores = []
            for ep in episodes:
                r = spec.final_reward(ep.graph)
                scores.append(spec.property(ep.graph))
                _rewards, adv = assign_rewards(ep, spec, final_reward=r)
                advantages.append(adv)
                log.offer(scores[-1], identity(ep.graph), top_k)
            log.iteration_scores.append(float(np.mean(scores)))
        loss = ppo_loss(model, episodes, advantages, ppo.clip_eps,
                        t1=sample_config.t1, t2=sample_config.t2)
        ad.backward(loss)
        model.store.fill_missing_grads()
        if ppo.grad_clip is not None:
            model.store.clip_grad_norm(ppo.grad_clip)
        nn.adam_step(model.store, ppo.lr)
    return log


def constrained_init(g_in: LabeledGraph, rng: np.random.Generator,
                     max_remove: int = 5) -> LabeledGraph:
    """BFS-reorder the input and drop the last m nodes (m uniform on
    [0, max_remove], clamped to keep at least one node); the remaining prefix
    is connected by the BFS property."""
    order = bfs_order(g_in)
    g = g_in.relabel(order)
    n = g.num_nodes
    m = min(int(rng.integers(0, max_remove + 1)), n - 1)
    keep = n - m
    edges = [(i, j, t) for (i, j, t) in g.edges if i < keep and j < keep]
    return LabeledGraph.build(g.node_types[:keep], edges)


@dataclass
class ConstrainedResult:
    input_identity: str
    best_identity: str | None
    improvement: float | None
    similarity: float | None
    success: bool
    delta: float


def finetune_constrained(model: DiscreteFlowModel, inputs: list[LabeledGraph],
                         scorer, ppo: PPOConfig, sample_config: SampleConfig,
                         attempts: int = 200, deltas: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6),
                         spec: RewardSpec | None = None,
                         alphabet=None) -> tuple[list[ConstrainedResult], dict]:
    """Constrained optimization: fine-tune with episodes started from partial
    input molecules and reward score(out) - score(in); then, per input, run
    `attempts` generations and keep the best improvement among outputs more
    similar than each threshold delta.

    Returns per-(input, delta) rows and a per-delta summary with success
    rate and mean/std of improvement and similarity over successes.
    """
    alphabet = alphabet or model.alphabet
    base_spec = spec or RewardSpec(property=_zero)
    rng = np.random.default_rng(sample_config.seed)
    in_scores = [score(g, scorer, alphabet) for g in inputs]
    in_fps = [morgan_fingerprint(g) for g in inputs]

    for _it in range(ppo.iterations):
        picks = rng.integers(0, len(inputs), size=ppo.batch_size)
        inits = [constrained_init(inputs[p], rng) for p in picks]
        seeds = [int(rng.integers(0, 2**31 - 1)) for _ in picks]
        episodes = run_episodes(model, sample_config, seeds, init_graphs=inits)
        advantages = []
        for ep, p in zip(episodes, picks):
            improvement = score(ep.graph, scorer, alphabet) - in_scores[p]
            r = improvement - base_spec.strain_penalty(ep.graph) - base_spec.filter_penalty(ep.graph)
            _rew, adv = assign_rewards(ep, base_spec, final_reward=r)
            advantages.append(adv)
        loss = ppo_loss(model, episodes, advantages, ppo.clip_eps,
                        t1=sample_config.t1, t2=sample_config.t2)
        ad.backward(loss)
        model.store.fill_missing_grads()
        if ppo.grad_clip is not None:
            model.store.clip_grad_norm(ppo.grad_clip)
        nn.adam_step(model.store, ppo.lr)

    results: list[ConstrainedResult] = []
    for gi, g_in in enumerate(inputs):
        candidates = []
        inits = [constrained_init(g_in, rng) for _ in range(attempts)]
        seeds = [int(rng.integers(0, 2**31 - 1)) for _ in range(attempts)]
        episodes = run_episodes(model, sample_config, seeds, init_graphs=inits)
        for ep in episodes:
            sim = tanimoto(in_fps[gi], morgan_fingerprint(ep.graph))
            imp = score(ep.graph, scorer, alphabet) - in_scores[gi]
            candidates.append((imp, sim, ep.graph))
        ident_in = canonical_form(g_in, alphabet)
        for delta in deltas:
            qualifying = [(imp, sim, g) for (imp, sim, g) in candidates if sim > delta]
            best = max(qualifying, key=lambda c: c[0], default=None)
            if best is not None and best[0] > 0:
                results.append(ConstrainedResult(ident_in, canonical_form(best[2], alphabet),
                                                 best[0], best[1], True, delta))
            else:
                results.append(ConstrainedResult(ident_in, None, None, None, False, delta))

    summary = {}
    for delta in deltas:
        rows = [r for r in results if r.delta == delta]
        wins = [r for r in rows if r.success]
        entry = {"success_rate": 100.0 * len(wins) / len(rows) if rows else 0.0}
        if wins:
            imps = np.array([r.improvement for r in wins])
            sims = np.array([r.similarity for r in wins])
            entry.update(improvement_mean=float(imps.mean()), improvement_std=float(imps.std()),
                         similarity_mean=float(sims.mean()), similarity_std=float(sims.std()))
        summary[delta] = entry
    return results, summary


def write_constrained_table(path: str, results: list[ConstrainedResult]) -> None:
    """Comma-separated rows: input, best, improvement, similarity, success, delta."""
    with open(path, "w") as fh:
        fh.write("input_smiles,best_smiles,improvement,similarity,success,delta\n")
        for r in results:
            best = r.best_identity or ""
            imp = f"{r.improvement:.6g}" if r.improvement is not None else ""
            sim = f"{r.similarity:.6g}" if r.similarity is not None else ""
            fh.write(f"{r.input_identity},{best},{imp},{sim},{int(r.success)},{r.delta}\n")
