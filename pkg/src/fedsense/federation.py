"""Reputation-aware and vote-based decision aggregation across devices.

Each device emits a hard estimate ES in {0, 1} per task. The aggregator
weighs legitimate votes (by device reputation, or by a constant alpha in
vote mode), turns the weighted mass into P(legit), prices both possible
decisions with the utility-loss matrix and the task's value, and picks the
cheaper one, ties going to legitimate. In dynamic mode every device's
reputation is then updated against the final decision.

Decisions are evaluated in exact rational arithmetic over the float
parameters (epsilon, lambdas, alpha, task value); only the reported numbers
are rounded. Exact ties between the two actions therefore resolve to
legitimate regardless of rounding.
"""

import csv
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from fedsense.errors import ConfigurationError, DomainError, StateError

MODES = ("dynamic", "vote")
INITIAL_REPUTATION = 0.5
DEFAULT_EPSILON = 1e-5


@dataclass(frozen=True)
class LossParams:
    """Utility-loss matrix entries.

    lambda1: loss of predicting legitimate when the task is fake.
    lambda2: loss of predicting fake when the task is legitimate.
    """

    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ConfigurationError("lambda1 and lambda2 must be positive")

    @classmethod
    def from_ratio(cls, ratio, lambda1=1.0):
        """Loss pair with ``lambda1 / lambda2 == ratio``, lambda1 held fixed."""
        if not ratio > 0:
            raise ConfigurationError("loss ratio must be positive")
        return cls(lambda1, lambda1 / ratio)

    @property
    def ratio(self):
        return self.lambda1 / self.lambda2

    @property
    def threshold(self):
        """P(legit) at or above which the legitimate decision is chosen."""
        return self.lambda1 / (self.lambda1 + self.lambda2)


@dataclass(frozen=True)
class FederationConfig:
    k: int = 5
    mode: str = "dynamic"
    alpha: float = 1.0
    epsilon: float = DEFAULT_EPSILON
    loss: LossParams = field(default_factory=LossParams)

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown aggregation mode {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")


@dataclass(frozen=True)
class DeviceState:
    device_id: int
    model: object = None
    cp: int = 0
    cd: int = 0
    reputation: float = INITIAL_REPUTATION
    epsilon: float = DEFAULT_EPSILON

    @property
    def next_task_index(self):
        # cd counts every update, i.e. every task already decided
        return self.cd + 1

    @property
    def exact_reputation(self):
        return reputation_exact(self.cp, self.cd, self.next_task_index, self.epsilon)


@dataclass(frozen=True)
class AggregationOutcome:
    task_id: int
    es: tuple
    weights: tuple
    s: float
    p_legit: float
    p_fake: float
    rt: float
    rf: float
    fd: int
    chosen_risk: float
    label: int
    task_value: int
    realized_loss: float


def reputation_of(cp, cd, task_index, epsilon=DEFAULT_EPSILON):
    """Device reputation from its agreement counters.

    The first task uses the initial reputation 0.5; afterwards it is
    ``(epsilon + cp) / (2 * epsilon + cd)``.
    """
    if task_index < 1:
        raise DomainError("task_index starts at 1")
    if cp < 0 or cd < 0:
        raise DomainError("counters must be non-negative")
    if task_index == 1:
        return INITIAL_REPUTATION
    return (epsilon + cp) / (2.0 * epsilon + cd)


def reputation_exact(cp, cd, task_index, epsilon=DEFAULT_EPSILON):
    """``reputation_of`` as an exact Fraction of the float epsilon."""
    if task_index < 1:
        raise DomainError("task_index starts at 1")
    if task_index == 1:
        return Fraction(1, 2)
    eps = Fraction(epsilon)
    return (eps + cp) / (2 * eps + cd)


def _ratio(x):
    """Exact (numerator, denominator) of an int, float or Fraction."""
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, int):
        return x, 1
    if isinstance(x, Fraction):
        return x.numerator, x.denominator
    return float(x).as_integer_ratio()


def _check_es(es):
    es = tuple(int(e) for e in es)
    if any(e not in (0, 1) for e in es):
        raise DomainError("device estimates must be 0 or 1")
    return es


def aggregate_dynamic(es, reputations):
    es = _check_es(es)
    reputations = tuple(float(r) for r in reputations)
    if len(es) != len(reputations):
        raise DomainError(f"{len(es)} estimates but {len(reputations)} reputations")
    # devices voting fake contribute nothing
    return float(sum(r for e, r in zip(es, reputations) if e == 1))


def aggregate_vote(es, alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError("alpha must lie in [0, 1]")
    return float(alpha * sum(_check_es(es)))


def probabilities(s, k):
    """(P(legit), P(fake)) with P(legit) = S / k."""
    if k < 1:
        raise DomainError("k must be >= 1")
    if not 0.0 <= s <= k:
        raise DomainError(f"aggregated mass {s} outside [0, {k}]")
    p_legit = s / k
    return p_legit, 1.0 - p_legit


def risks(p_legit, p_fake, loss, task_value):
    """(risk of deciding legitimate, risk of deciding fake)."""
    if p_legit < 0 or p_fake < 0:
        raise DomainError("probabilities must be non-negative")
    if task_value < 0:
        raise DomainError("task_value must be non-negative")
    rt = p_fake * loss.lambda1 * task_value
    rf = p_legit * loss.lambda2 * task_value
    return rt, rf


def decide(rt, rf):
    return 1 if rt <= rf else 0


def realized_loss(fd, label, loss, task_value):
    if fd == label:
        return 0.0
    if fd == 1:
        return loss.lambda1 * task_value
    return loss.lambda2 * task_value


def update_reputation(dev, es_j, fd):
    """Count an agreement (cp and cd up) or a disagreement (cd up only)."""
    cp = dev.cp + 1 if es_j == fd else dev.cp
    cd = dev.cd + 1
    rep = reputation_of(cp, cd, cd + 1, dev.epsilon)
    return DeviceState(dev.device_id, dev.model, cp, cd, rep, dev.epsilon)


def decide_task(es, weights, cfg, task_value, label, task_id=0):
    """Aggregate one task's estimates into an AggregationOutcome.

    ``weights`` are the device reputations, floats or Fractions (ignored in
    vote mode).
    """
    es = _check_es(es)
    if len(es) != cfg.k:
        raise DomainError(f"expected {cfg.k} estimates, got {len(es)}")
    if cfg.mode == "dynamic":
        weights = tuple(weights)
        if len(weights) != cfg.k:
            raise DomainError(f"{cfg.k} estimates but {len(weights)} reputations")
        ratios = [_ratio(w) for w in weights]
    else:
        weights = (cfg.alpha,) * cfg.k
        ratios = None
    weights = tuple(float(w) for w in weights)
    return _decide_exact(es, ratios, weights, cfg, task_value, label, task_id)


def _decide_exact(es, ratios, weights, cfg, task_value, label, task_id):
    # S = P / Q kept as an unreduced integer fraction; int / int rounds correctly
    k = cfg.k
    if cfg.mode == "dynamic":
        P, Q = 0, 1
        for e, (n, d) in zip(es, ratios):
            if e == 1:
                P, Q = P * d + n * Q, Q * d
    else:
        an, ad = _ratio(cfg.alpha)
        P, Q = an * sum(es), ad
    if P < 0 or P > k * Q:
        raise DomainError(f"aggregated mass {P / Q} outside [0, {k}]")
    tn, td = _ratio(task_value)
    if tn < 0:
        raise DomainError("task_value must be non-negative")
    l1n, l1d = _ratio(cfg.loss.lambda1)
    l2n, l2d = _ratio(cfg.loss.lambda2)
    kQ = k * Q
    rt_num = (kQ - P) * l1n * tn
    rf_num = P * l2n * tn
    rt_den = kQ * l1d * td
    rf_den = kQ * l2d * td
    fd = 1 if rt_num * rf_den <= rf_num * rt_den else 0
    p_legit = P / kQ
    rt = rt_num / rt_den
    rf = rf_num / rf_den
    return AggregationOutcome(
        task_id=int(task_id),
        es=es,
        weights=weights,
        s=P / Q,
        p_legit=p_legit,
        p_fake=1.0 - p_legit,
        rt=rt,
        rf=rf,
        fd=fd,
        chosen_risk=rt if fd == 1 else rf,
        label=int(label),
        task_value=int(task_value),
        realized_loss=realized_loss(fd, label, cfg.loss, task_value),
    )


def collect_estimates(devices, tasks):
    """(n_tasks, k) matrix of device estimates on the tasks' ML features."""
    X = tasks.features()
    cols = []
    for dev in devices:
        if dev.model is None:
            raise StateError(f"device {dev.device_id} has no trained model")
        cols.append(np.asarray(dev.model.predict(X), dtype=np.int64))
    return np.column_stack(cols) if cols else np.empty((len(tasks), 0), np.int64)


def aggregate_stream(es_matrix, labels, task_values, cfg, devices=None, task_ids=None):
    """Run the per-task decision loop over precomputed estimates.

    Returns ``(outcomes, devices)`` where ``devices`` holds the final
    reputation state (unchanged in vote mode).
    """
    es_matrix = np.asarray(es_matrix)
    n = es_matrix.shape[0]
    if devices is None:
        devices = [DeviceState(j, epsilon=cfg.epsilon) for j in range(cfg.k)]
    devices = list(devices)
    if len(devices) != cfg.k:
        raise ConfigurationError(f"config expects {cfg.k} devices, got {len(devices)}")
    if task_ids is None:
        task_ids = range(n)
    en, ed = _ratio(cfg.epsilon)
    labels = np.asarray(labels).tolist()
    task_values = np.asarray(task_values).tolist()
    rows = es_matrix.tolist()
    outcomes = []
    for i, tid in zip(range(n), task_ids):
        es = _check_es(rows[i])
        if len(es) != cfg.k:
            raise DomainError(f"expected {cfg.k} estimates, got {len(es)}")
        if cfg.mode == "dynamic":
            # (eps + cp) / (2 eps + cd) with eps = en / ed, or 1/2 before any update
            ratios = [(en + d.cp * ed, 2 * en + d.cd * ed) if d.cd else (1, 2) for d in devices]
            weights = tuple(d.reputation for d in devices)
        else:
            ratios = None
            weights = (cfg.alpha,) * cfg.k
        out = _decide_exact(es, ratios, weights, cfg, task_values[i], labels[i], tid)
        outcomes.append(out)
        if cfg.mode == "dynamic":
            devices = [update_reputation(d, e, out.fd) for d, e in zip(devices, es)]
    return outcomes, devices


def run_stream(devices, tasks, cfg, return_devices=False):
    """Process ``tasks`` in order through the federated detector.

    Device reputations are reset to their initial state for the run.
    """
    if len(tasks) == 0:
        raise DomainError("task stream is empty")
    devices = [
        DeviceState(d.device_id, d.model, epsilon=cfg.epsilon) for d in devices
    ]
    es = collect_estimates(devices, tasks)
    outcomes, final = aggregate_stream(
        es, tasks.labels, tasks.task_values, cfg, devices, tasks.ids
    )
    return (outcomes, final) if return_devices else outcomes


OUTCOME_FIELDS = ("task_id", "s", "p_legit", "rt", "rf", "fd", "label", "chosen_risk", "realized_loss")


def save_outcomes(outcomes, path):
    k = len(outcomes[0].es) if outcomes else 0
    header = ["task_id"] + [f"es_{j + 1}" for j in range(k)] + list(OUTCOME_FIELDS[1:])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for o in outcomes:
            w.writerow(
                [o.task_id, *o.es]
                + [repr(o.s), repr(o.p_legit), repr(o.rt), repr(o.rf), o.fd, o.label,
                   repr(o.chosen_risk), repr(o.realized_loss)]
            )
