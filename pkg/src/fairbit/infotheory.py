"""Information-theoretic quantities over a stochastic binary layer.

Everything here is in bits (base-2 logs). Two families of estimators:

* per-neuron quantities built from Bernoulli parameters (the summed
  per-neuron mutual information is the upper bound on the layer's joint MI
  that one training variant minimizes), and
* joint-layer quantities built by counting binary activation vectors,
  either from hard samples or as a differentiable soft expectation over the
  Bernoulli parameters.

Total correlation and informativeness are included as diagnostics; the slack
of the summed bound equals the informativeness of the sensitive attribute,
which the test suite checks on randomized instances.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .exceptions import CapacityError

LN2 = float(np.log(2.0))

# 2**m enumeration caps: dense soft counting is capped harder than sparse
# hard counting.
HARD_MAX_NEURONS = 24
SOFT_MAX_NEURONS = 14


def bernoulli_entropy(theta):
    """Entropy in bits of a Bernoulli(theta) variable, with 0*log(0) = 0.

    Accepts scalars or arrays; every entry must lie in [0, 1].
    """
    t = np.asarray(theta, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("Bernoulli parameter must lie in [0, 1]")
    h = -(xlogy(t, t) + xlogy(1.0 - t, 1.0 - t)) / LN2
    if np.isscalar(theta) or t.ndim == 0:
        return float(h)
    return h


def _entropy_deriv(theta: np.ndarray) -> np.ndarray:
    # d/dt of bernoulli_entropy = log2((1-t)/t)
    return np.log2((1.0 - theta) / theta)


@dataclass
class GroupedThetas:
    """A batch of Bernoulli parameter rows with per-row group labels.

    ``group_weights`` holds the empirical p(s) over the groups present in
    the batch; groups absent from the batch simply do not appear (their
    conditional terms are dropped and the weights renormalize).
    """

    theta: np.ndarray            # (batch, m)
    groups: np.ndarray           # (batch,)
    group_weights: dict          # group label -> empirical probability

    @classmethod
    def from_batch(cls, theta, groups) -> "GroupedThetas":
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        groups = np.asarray(groups)
        if theta.shape[0] != groups.shape[0]:
            raise ValueError("theta and groups must have one row per example")
        labels, counts = np.unique(groups, return_counts=True)
        weights = {int(l): c / groups.shape[0] for l, c in zip(labels, counts)}
        return cls(theta=theta, groups=groups, group_weights=weights)

    @property
    def n_neurons(self) -> int:
        return self.theta.shape[1]

    def group_mask(self, label) -> np.ndarray:
        return self.groups == label


def neuron_mi(g: GroupedThetas, i: int) -> float:
    """Mutual information (bits) between neuron i and the group label.

    Marginal and conditional Bernoulli parameters are the batch means of the
    theta column (overall, and restricted to each group); the MI is the
    entropy of the marginal minus the weighted conditional entropies.
    """
    if not 0 <= i < g.n_neurons:
        raise IndexError(f"neuron index {i} out of range for m={g.n_neurons}")
    if len(g.group_weights) < 2:
        warnings.warn("single group present; neuron MI is 0 by convention")
        return 0.0
    col = g.theta[:, i]
    mi = bernoulli_entropy(float(col.mean()))
    for label, weight in g.group_weights.items():
        mi -= weight * bernoulli_entropy(float(col[g.group_mask(label)].mean()))
    return float(mi)


def layer_mi_bound(g: GroupedThetas) -> float:
    """Sum of per-neuron MIs: the upper bound on the layer's joint MI."""
    return float(sum(neuron_mi(g, i) for i in range(g.n_neurons)))


def layer_mi_bound_grad(theta, groups):
    """Summed per-neuron MI and its gradient w.r.t. each theta entry.

    Closed form: the gradient of row n, neuron i is
    (H'(mean_i) - H'(mean over n's group of column i)) / batch.
    """
    g = GroupedThetas.from_batch(theta, groups)
    n = g.theta.shape[0]
    if len(g.group_weights) < 2:
        warnings.warn("single group present; MI bound and gradient are 0")
        return 0.0, np.zeros_like(g.theta)
    overall = g.theta.mean(axis=0)
    value = bernoulli_entropy(overall).sum()
    grad = np.tile(_entropy_deriv(overall) / n, (n, 1))
    for label, weight in g.group_weights.items():
        mask = g.group_mask(label)
        cond = g.theta[mask].mean(axis=0)
        value -= weight * bernoulli_entropy(cond).sum()
        grad[mask] -= _entropy_deriv(cond) / n
    return float(value), grad


def bitvectors(m: int) -> np.ndarray:
    """All 2**m binary vectors as a (2**m, m) array; neuron i is bit i."""
    idx = np.arange(2 ** m, dtype=np.int64)
    return ((idx[:, None] >> np.arange(m)) & 1).astype(np.float64)


def _encode_rows(samples: np.ndarray) -> np.ndarray:
    powers = (1 << np.arange(samples.shape[1], dtype=np.int64))
    return samples.astype(np.int64) @ powers


def _key_of(bits) -> tuple:
    return tuple(int(b) for b in bits)


@dataclass
class JointHistogram:
    """Probability mass over binary activation vectors of one layer."""

    m: int
    mass: dict   # tuple of {0,1} of length m -> probability
    kind: str    # "hard" or "soft"

    def __post_init__(self):
        if self.kind not in ("hard", "soft"):
            raise ValueError(f"unknown histogram kind {self.kind!r}")
        total = 0.0
        for key, p in self.mass.items():
            if len(key) != self.m or any(b not in (0, 1) for b in key):
                raise ValueError(f"bad histogram key {key!r} for m={self.m}")
            if p < -1e-12:
                raise ValueError("histogram masses must be nonnegative")
            total += p
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"histogram mass sums to {total}, expected 1")

    def probabilities(self) -> np.ndarray:
        return np.array(list(self.mass.values()), dtype=np.float64)

    def marginals(self) -> np.ndarray:
        """Per-neuron P(T_i = 1)."""
        p = np.zeros(self.m)
        for key, mass in self.mass.items():
            p += mass * np.asarray(key, dtype=np.float64)
        return p


def joint_histogram_hard(samples) -> JointHistogram:
    """Empirical mass over activation vectors by direct counting."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    m = samples.shape[1]
    if m > HARD_MAX_NEURONS:
        raise CapacityError(
            f"hard counting supports at most {HARD_MAX_NEURONS} neurons, got {m}")
    if not np.isin(samples, (0.0, 1.0)).all():
        raise ValueError("hard histogram input must be binary")
    codes, counts = np.unique(_encode_rows(samples), return_counts=True)
    n = samples.shape[0]
    mass = {}
    for code, count in zip(codes, counts):
        bits = tuple(int((code >> i) & 1) for i in range(m))
        mass[bits] = count / n
    return JointHistogram(m=m, mass=mass, kind="hard")


def joint_histogram_soft(theta) -> JointHistogram:
    """Expected mass over activation vectors under per-row Bernoulli draws.

    Differentiable in theta; reduces to the hard histogram when every theta
    entry is exactly 0 or 1.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    m = theta.shape[1]
    if m > SOFT_MAX_NEURONS:
        raise CapacityError(
            f"soft counting enumerates 2**m vectors and supports at most "
            f"{SOFT_MAX_NEURONS} neurons, got {m}; use hard counting or a "
            f"narrower stochastic layer")
    q = _soft_vector_probs(theta).mean(axis=0)
    vectors = bitvectors(m)
    mass = {_key_of(vectors[v]): float(q[v]) for v in range(vectors.shape[0])}
    return JointHistogram(m=m, mass=mass, kind="soft")


def _soft_vector_probs(theta: np.ndarray) -> np.ndarray:
    """(batch, 2**m) matrix of per-row probabilities of each binary vector."""
    v = bitvectors(theta.shape[1])
    log_t = np.log(np.clip(theta, 1e-300, None))
    log_1mt = np.log(np.clip(1.0 - theta, 1e-300, None))
    return np.exp(log_t @ v.T + log_1mt @ (1.0 - v).T)


def histogram_entropy(h: JointHistogram) -> float:
    """Shannon entropy in bits of the histogram's mass function."""
    p = h.probabilities()
    return float(-xlogy(p, p).sum() / LN2)


def _distribution_entropy(p: np.ndarray) -> float:
    return float(-xlogy(p, p).sum() / LN2)


def conditional_histograms(data, groups, kind: str = "hard"):
    """Joint and per-group histograms plus empirical group weights.

    ``data`` is the binary sample matrix for ``kind="hard"`` or the theta
    matrix for ``kind="soft"``.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    groups = np.asarray(groups)
    if data.shape[0] != groups.shape[0]:
        raise ValueError("data and groups must have one row per example")
    build = joint_histogram_hard if kind == "hard" else joint_histogram_soft
    joint = build(data)
    labels, counts = np.unique(groups, return_counts=True)
    weights = {int(l): c / groups.shape[0] for l, c in zip(labels, counts)}
    conditionals = {int(l): build(data[groups == l]) for l in labels}
    return joint, conditionals, weights


def joint_mi(data, groups, kind: str = "hard") -> float:
    """Mutual information (bits) between the activation vector and the group.

    Computed as H(T) minus the group-weighted conditional entropies, with
    histograms built by the chosen counting scheme.
    """
    joint, conditionals, weights = conditional_histograms(data, groups, kind)
    mi = histogram_entropy(joint)
    for label, weight in weights.items():
        mi -= weight * histogram_entropy(conditionals[label])
    return float(mi)


def soft_joint_mi_grad(theta, groups):
    """Soft-counting joint MI and its gradient w.r.t. each theta entry.

    This is the differentiable training path for the joint-MI loss variant;
    evaluation uses hard counting on actual samples instead.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    groups = np.asarray(groups)
    n, m = theta.shape
    if m > SOFT_MAX_NEURONS:
        raise CapacityError(
            f"soft counting supports at most {SOFT_MAX_NEURONS} neurons, got {m}")
    labels, counts = np.unique(groups, return_counts=True)
    if labels.shape[0] < 2:
        warnings.warn("single group present; joint MI and gradient are 0")
        return 0.0, np.zeros_like(theta)

    probs = _soft_vector_probs(theta)          # (n, 2**m)
    q = probs.mean(axis=0)
    value = _distribution_entropy(q)
    # log2 q_{s_n}(v) - log2 q(v), row-aligned with theta
    log_ratio = np.empty_like(probs)
    for label, count in zip(labels, counts):
        mask = groups == label
        q_s = probs[mask].mean(axis=0)
        value -= (count / n) * _distribution_entropy(q_s)
        log_ratio[mask] = (np.log(q_s) - np.log(q)) / LN2
    weighted = probs * log_ratio
    v = bitvectors(m)
    grad = (weighted @ v - theta * weighted.sum(axis=1, keepdims=True))
    grad /= theta * (1.0 - theta) * n
    return float(value), grad


def total_correlation(h: JointHistogram) -> float:
    """Sum of marginal entropies minus the joint entropy, in bits."""
    return float(bernoulli_entropy(h.marginals()).sum() - histogram_entropy(h))


def informativeness(joint: JointHistogram, conditionals: dict, p_s: dict) -> float:
    """Total correlation of the layer minus its group-conditional average.

    Equals the slack of the summed per-neuron MI bound over the joint MI;
    nonnegative for any distribution.
    """
    for h in conditionals.values():
        if h.m != joint.m:
            raise ValueError("conditional histograms must match the joint's width")
    value = total_correlation(joint)
    for label, weight in p_s.items():
        value -= weight * total_correlation(conditionals[label])
    return float(value)


def format_histogram(h: JointHistogram) -> str:
    """Text dump: one ``bitvector<TAB>probability`` line, sorted by bitstring."""
    lines = []
    for key in sorted(h.mass, key=lambda k: "".join(str(b) for b in k)):
        bits = "".join(str(b) for b in key)
        lines.append(f"{bits}\t{h.mass[key]!r}")
    return "\n".join(lines) + "\n"


def write_histogram(h: JointHistogram, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_histogram(h))
