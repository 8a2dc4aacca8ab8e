"""Multi-head self-attention with prompt and prefix tuning, plus the exact
per-head mixture-of-experts decompositions used as numerical cross-checks.

Conventions: embeddings are rows, a sequence is an (n_tokens, dim) array,
and every attention logit is divided by sqrt(d_head). All functions here
are pure; the two decompositions deliberately associate the matrix
products differently from the forward passes so that agreement between the
two routes is a meaningful floating-point check rather than a tautology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._util import frozen_array, softmax_rows
from .errors import ConfigurationError, UsageError

__all__ = [
    "AttentionBundle",
    "PromptSet",
    "MoeDecomposition",
    "EquivalenceReport",
    "msa_forward",
    "prefix_forward",
    "prompt_forward",
    "prefix_head_outputs",
    "prompt_head_outputs",
    "prefix_moe_decompose",
    "prompt_moe_decompose",
    "random_bundle",
    "run_equivalence_trials",
]


@dataclass(frozen=True)
class AttentionBundle:
    """Frozen weights and input sequence for one multi-head attention layer.

    x: (n_tokens, dim) input embeddings.
    wq, wk, wv: (n_heads, dim, d_head) per-head projections with
        d_head = dim // n_heads (key and value widths are equal).
    wo: (n_heads * d_head, dim) output projection.
    """

    x: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self):
        x = frozen_array(self.x, name="x")
        if x.ndim != 2:
            raise ConfigurationError("x must be 2-D (n_tokens, dim)")
        wq = np.asarray(self.wq, dtype=float)
        if wq.ndim != 3:
            raise ConfigurationError("wq must be 3-D (n_heads, dim, d_head)")
        n_heads = wq.shape[0]
        dim = x.shape[1]
        if n_heads < 1 or dim % n_heads:
            raise ConfigurationError(
                f"dim {dim} must be divisible by n_heads {n_heads}"
            )
        d_head = dim // n_heads
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "wq", frozen_array(self.wq, (n_heads, dim, d_head), "wq"))
        object.__setattr__(self, "wk", frozen_array(self.wk, (n_heads, dim, d_head), "wk"))
        object.__setattr__(self, "wv", frozen_array(self.wv, (n_heads, dim, d_head), "wv"))
        object.__setattr__(self, "wo", frozen_array(self.wo, (n_heads * d_head, dim), "wo"))

    @property
    def n_tokens(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def n_heads(self) -> int:
        return self.wq.shape[0]

    @property
    def d_head(self) -> int:
        return self.dim // self.n_heads


@dataclass(frozen=True)
class PromptSet:
    """Prompt vectors in one of two modes.

    prefix: separate key and value prompt stacks of equal length, appended
        to the attention keys and values only.
    prompt: a single stack joined to queries, keys, and values alike; the
        key and value views are then literally the same array (tied
        structure with identity maps on both sides).
    """

    mode: str
    p_key: np.ndarray
    p_value: np.ndarray

    def __post_init__(self):
        if self.mode not in ("prompt", "prefix"):
            raise ConfigurationError(f"unknown prompt mode {self.mode!r}")
        tied = self.p_value is self.p_key
        pk = np.array(self.p_key, dtype=float)
        pv = pk if tied else np.array(self.p_value, dtype=float)
        if pk.ndim != 2 or pv.ndim != 2:
            raise ConfigurationError("prompt stacks must be 2-D")
        if pk.shape != pv.shape:
            raise ConfigurationError(
                f"key/value prompt stacks differ in shape: {pk.shape} vs {pv.shape}"
            )
        for name, arr in (("p_key", pk), ("p_value", pv)):
            if arr.size and not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"{name}: non-finite entries")
            arr.setflags(write=False)
        object.__setattr__(self, "p_key", pk)
        object.__setattr__(self, "p_value", pv)

    @classmethod
    def prefix(cls, p_key, p_value) -> "PromptSet":
        return cls("prefix", np.asarray(p_key, dtype=float), np.asarray(p_value, dtype=float))

    @classmethod
    def prompt(cls, p) -> "PromptSet":
        arr = np.asarray(p, dtype=float)
        return cls("prompt", arr, arr)

    @property
    def length(self) -> int:
        return self.p_key.shape[0]


def _head_outputs(bundle: AttentionBundle, queries, keys, values) -> np.ndarray:
    scale = 1.0 / math.sqrt(bundle.d_head)
    out = np.empty((bundle.n_heads, queries.shape[0], bundle.d_head))
    for head in range(bundle.n_heads):
        q = queries @ bundle.wq[head]
        k = keys @ bundle.wk[head]
        v = values @ bundle.wv[head]
        out[head] = softmax_rows(q @ k.T * scale) @ v
    return out


def _concat_project(bundle: AttentionBundle, heads: np.ndarray) -> np.ndarray:
    return np.concatenate(list(heads), axis=1) @ bundle.wo


def _check_mode(prompts: PromptSet, mode: str) -> None:
    if prompts.mode != mode:
        raise UsageError(f"prompt set has mode {prompts.mode!r}, expected {mode!r}")


def _prompt_arrays(bundle: AttentionBundle, prompts: PromptSet):
    if prompts.length == 0:
        empty = np.zeros((0, bundle.dim))
        return empty, empty
    if prompts.p_key.shape[1] != bundle.dim:
        raise ConfigurationError(
            f"prompt dim {prompts.p_key.shape[1]} != bundle dim {bundle.dim}"
        )
    return prompts.p_key, prompts.p_value


def msa_forward(bundle: AttentionBundle) -> np.ndarray:
    """Plain multi-head self-attention output, one row per input token."""
    return _concat_project(bundle, _head_outputs(bundle, bundle.x, bundle.x, bundle.x))


def prefix_forward(bundle: AttentionBundle, prompts: PromptSet) -> np.ndarray:
    """Attention with prompt stacks prepended to keys and values only.

    The output keeps one row per input token; an empty prompt set reduces
    to ``msa_forward`` on the same arithmetic path.
    """
    _check_mode(prompts, "prefix")
    if prompts.length == 0:
        return msa_forward(bundle)
    p_key, p_value = _prompt_arrays(bundle, prompts)
    keys = np.vstack([p_key, bundle.x])
    values = np.vstack([p_value, bundle.x])
    return _concat_project(bundle, _head_outputs(bundle, bundle.x, keys, values))


def prompt_forward(bundle: AttentionBundle, prompts: PromptSet) -> np.ndarray:
    """Attention with a single prompt stack joined to queries, keys, and values.

    Returns n_tokens + n_prompts rows: original token positions first, then
    one row per prompt vector (each prompt row is a fresh mixture over the
    same expanded expert set).
    """
    _check_mode(prompts, "prompt")
    if prompts.length == 0:
        return msa_forward(bundle)
    p, _ = _prompt_arrays(bundle, prompts)
    queries = np.vstack([bundle.x, p])
    keys = np.vstack([p, bundle.x])
    values = np.vstack([p, bundle.x])
    return _concat_project(bundle, _head_outputs(bundle, queries, keys, values))


def prefix_head_outputs(bundle: AttentionBundle, prompts: PromptSet) -> np.ndarray:
    """Per-head outputs (n_heads, n_tokens, d_head) of prefix attention."""
    _check_mode(prompts, "prefix")
    p_key, p_value = _prompt_arrays(bundle, prompts)
    keys = np.vstack([p_key, bundle.x])
    values = np.vstack([p_value, bundle.x])
    return _head_outputs(bundle, bundle.x, keys, values)


def prompt_head_outputs(bundle: AttentionBundle, prompts: PromptSet) -> np.ndarray:
    """Per-head outputs (n_heads, n_tokens + n_prompts, d_head), token rows first."""
    _check_mode(prompts, "prompt")
    p, _ = _prompt_arrays(bundle, prompts)
    queries = np.vstack([bundle.x, p])
    keys = np.vstack([p, bundle.x])
    values = np.vstack([p, bundle.x])
    return _head_outputs(bundle, queries, keys, values)


@dataclass(frozen=True)
class MoeDecomposition:
    """Per-row mixture view of one attention head.

    gates[i, e] is the weight row i places on expert e, experts[e] is that
    expert's output vector, and scores holds the pre-softmax logits.
    ``gates @ experts`` reproduces the head's output rows.
    """

    head: int
    gates: np.ndarray
    scores: np.ndarray
    experts: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.gates @ self.experts


def _check_head(bundle: AttentionBundle, head: int) -> None:
    if not 0 <= head < bundle.n_heads:
        raise ConfigurationError(f"head {head} out of range for {bundle.n_heads} heads")


def prefix_moe_decompose(bundle: AttentionBundle, prompts: PromptSet, head: int = 0) -> MoeDecomposition:
    """Mixture view of prefix attention for one head.

    Experts: one per token position (wv^T x_j) followed by one constant
    expert per prefix value vector (wv^T p_v). Scores pair each token row
    with every expert through the bilinear form x_i^T (wq wk^T) k divided
    by sqrt(d_head), where k is the token position or the prefix key.
    """
    _check_mode(prompts, "prefix")
    _check_head(bundle, head)
    p_key, p_value = _prompt_arrays(bundle, prompts)
    core = bundle.wq[head] @ bundle.wk[head].T
    scale = 1.0 / math.sqrt(bundle.d_head)
    xc = bundle.x @ core
    scores = np.hstack([xc @ bundle.x.T, xc @ p_key.T]) * scale
    experts = np.vstack([bundle.x @ bundle.wv[head], p_value @ bundle.wv[head]])
    return MoeDecomposition(head, softmax_rows(scores), scores, experts)


def prompt_moe_decompose(bundle: AttentionBundle, prompts: PromptSet, head: int = 0) -> MoeDecomposition:
    """Mixture view of prompt attention for one head, covering every one of
    the n_tokens + n_prompts output rows.

    Expert order: token positions, then prompt vectors. Rows past n_tokens
    are fresh mixtures whose scores pair a prompt query with each expert;
    the prompt-prompt score block does not depend on the input sequence.
    """
    _check_mode(prompts, "prompt")
    _check_head(bundle, head)
    p, _ = _prompt_arrays(bundle, prompts)
    core = bundle.wq[head] @ bundle.wk[head].T
    scale = 1.0 / math.sqrt(bundle.d_head)
    xc = bundle.x @ core
    pc = p @ core
    top = np.hstack([xc @ bundle.x.T, xc @ p.T])
    bottom = np.hstack([pc @ bundle.x.T, pc @ p.T])
    scores = np.vstack([top, bottom]) * scale
    experts = np.vstack([bundle.x @ bundle.wv[head], p @ bundle.wv[head]])
    return MoeDecomposition(head, softmax_rows(scores), scores, experts)


def random_bundle(n_tokens: int, dim: int, n_heads: int, rng, scale: float = 1.0) -> AttentionBundle:
    """Gaussian bundle with the given dimensions, driven by ``rng``."""
    if n_heads < 1 or dim % n_heads:
        raise ConfigurationError(f"dim {dim} must be divisible by n_heads {n_heads}")
    d_head = dim // n_heads
    return AttentionBundle(
        x=scale * rng.standard_normal((n_tokens, dim)),
        wq=scale * rng.standard_normal((n_heads, dim, d_head)),
        wk=scale * rng.standard_normal((n_heads, dim, d_head)),
        wv=scale * rng.standard_normal((n_heads, dim, d_head)),
        wo=scale * rng.standard_normal((n_heads * d_head, dim)),
    )


@dataclass(frozen=True)
class EquivalenceReport:
    """Worst deviations between tuned forwards and their mixture rebuilds."""

    n_trials: int
    tolerance: float
    max_abs_diff_prefix: float
    max_abs_diff_prompt: float

    @property
    def passed(self) -> bool:
        return (
            self.max_abs_diff_prefix <= self.tolerance
            and self.max_abs_diff_prompt <= self.tolerance
        )

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "tolerance": self.tolerance,
            "max_abs_diff_prefix": self.max_abs_diff_prefix,
            "max_abs_diff_prompt": self.max_abs_diff_prompt,
            "passed": self.passed,
        }


def _rebuild_from_heads(bundle: AttentionBundle, decompositions) -> np.ndarray:
    return np.concatenate([d.reconstruct() for d in decompositions], axis=1) @ bundle.wo


def run_equivalence_trials(
    n_trials: int,
    seed: int,
    tolerance: float = 1e-9,
    max_tokens: int = 8,
    max_dim: int = 16,
    heads=(1, 2),
    max_prompts: int = 4,
) -> EquivalenceReport:
    """Randomized cross-check of both tuned forwards against their
    per-head mixture decompositions, tracking the worst absolute deviation
    of the fully projected outputs.
    """
    if n_trials < 0:
        raise ConfigurationError("n_trials must be nonnegative")
    rng = np.random.default_rng(int(seed))
    worst_prefix = 0.0
    worst_prompt = 0.0
    head_choices = [int(h) for h in heads]
    for _ in range(n_trials):
        m = head_choices[int(rng.integers(0, len(head_choices)))]
        d_head = int(rng.integers(1, max_dim // m + 1))
        dim = m * d_head
        n = int(rng.integers(1, max_tokens + 1))
        bundle = random_bundle(n, dim, m, rng)
        n_prefix = int(rng.integers(0, max_prompts + 1))
        n_prompt = int(rng.integers(0, max_prompts + 1))
        prefix = PromptSet.prefix(
            rng.standard_normal((n_prefix, dim)), rng.standard_normal((n_prefix, dim))
        )
        prompt = PromptSet.prompt(rng.standard_normal((n_prompt, dim)))

        direct = prefix_forward(bundle, prefix)
        rebuilt = _rebuild_from_heads(
            bundle, [prefix_moe_decompose(bundle, prefix, h) for h in range(m)]
        )
        worst_prefix = max(worst_prefix, float(np.abs(direct - rebuilt).max()))

        direct = prompt_forward(bundle, prompt)
        rebuilt = _rebuild_from_heads(
            bundle, [prompt_moe_decompose(bundle, prompt, h) for h in range(m)]
        )
        worst_prompt = max(worst_prompt, float(np.abs(direct - rebuilt).max()))
    return EquivalenceReport(n_trials, tolerance, worst_prefix, worst_prompt)
