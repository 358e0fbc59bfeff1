"""Slot-loop orchestration, load sweeps, metrics, and result export.

A run executes one algorithm at one arrival rate for a fixed number of
slots; a sweep repeats it over a list of rates with independently derived
seeds. Reports serialize to schema-versioned JSON and to flat CSV with
plot-ready columns, and (config, seed) fully determines the output bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import fixtures
from .backpressure import BackpressureEngine
from .coding import CodedParnEngine
from .routing import ParnEngine, PROBABILISTIC, TOKEN
from .topology import (Topology, InterferenceModel, K_HOP, WIRELINE,
                       build_topology, conflict_sets, load_topology)
from .traffic import TrafficSource, degree_pmf
from .util import derive_seed

REPORT_SCHEMA = "parnsim-report/1"
ALGORITHMS = ("bp", "mbp", "parn", "parn-coding")
RNG_VERSION = "pcg64"


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    """One experiment: fixture, algorithm, parameters, and the lambda list.

    epsilon=None resolves by rule: 0.1 on wireless, 0 on wireline with extra
    activation (it plays no role there), 0.02 on wireline without. warmup and
    bucket_cap have analogous defaults (10% of slots floored at 2000, and
    ceil(10/epsilon)).
    """

    topology: str | dict = "wireline31"
    algorithm: str = "parn"
    M: float = 2.0
    epsilon: float | None = None
    beta: float = 0.02
    lam: list[float] = field(default_factory=lambda: [0.1])
    lambda_per_node: list[float] | None = None
    slots: int = 100_000
    warmup: int | None = None
    seed: int = 1
    scheduler: str = "lwf"
    router: str = TOKEN
    extra_activation: bool = True
    bucket_cap: int | None = None
    interference_k: int | None = None
    destination_mode: str = "sampled"
    sigma_update_stride: int = 1
    delta_tol: float = 0.05
    workers: int = 1
    audit: bool = False
    rng: str = RNG_VERSION

    def __post_init__(self):
        if isinstance(self.lam, (int, float)):
            self.lam = [float(self.lam)]
        self.lam = [float(x) for x in self.lam]
        self.validate()

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.rng != RNG_VERSION:
            raise ConfigError(f"unsupported rng {self.rng!r}")
        if any(l < 0 for l in self.lam):
            raise ConfigError("lambda must be nonnegative")
        if self.warmup is not None and not (self.slots > self.warmup >= 0):
            raise ConfigError("need slots > warmup >= 0")
        if self.slots <= 0:
            raise ConfigError("slots must be positive")
        if self.epsilon is not None and not (0.0 <= self.epsilon < 1.0):
            raise ConfigError("epsilon must be in [0, 1)")
        if self.M < 0:
            raise ConfigError("M must be nonnegative")
        if self.scheduler not in ("lwf", "oracle"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.router not in (PROBABILISTIC, TOKEN):
            raise ConfigError(f"unknown router {self.router!r}")
        if self.destination_mode not in ("sampled", "static"):
            raise ConfigError(f"unknown destination mode {self.destination_mode!r}")
        if self.algorithm == "parn-coding" and self.interference_k is None:
            raise ConfigError("network coding requires a wireless (k-hop) model")

    @property
    def wireless(self) -> bool:
        return self.interference_k is not None and self.interference_k >= 1

    def resolved_warmup(self) -> int:
        if self.warmup is not None:
            return self.warmup
        return min(max(2000, self.slots // 10), self.slots - 1)

    def resolved_epsilon(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        if self.wireless:
            return 0.1
        return 0.0 if self.extra_activation else 0.02

    def resolved_bucket_cap(self) -> int:
        if self.bucket_cap is not None:
            return self.bucket_cap
        eps = self.resolved_epsilon()
        return math.ceil(10.0 / eps) if eps > 0 else 1_000_000

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def resolve_topology(spec: str | dict) -> Topology:
    if isinstance(spec, dict):
        return build_topology(spec)
    if fixtures.is_fixture(spec):
        return fixtures.load(spec)
    return load_topology(spec)


def build_model(topology: Topology, config: SimConfig) -> InterferenceModel:
    if config.wireless:
        return conflict_sets(topology, K_HOP, config.interference_k)
    return conflict_sets(topology, WIRELINE)


def build_engine(config: SimConfig, lam: float, seed: int,
                 topology: Topology | None = None):
    """Construct the engine for one sweep point."""
    topo = topology if topology is not None else resolve_topology(config.topology)
    model = build_model(topo, config)
    rng = np.random.Generator(np.random.PCG64(seed))
    pmf = degree_pmf(topo)
    eps = config.resolved_epsilon()
    lam_arg = config.lambda_per_node if config.lambda_per_node is not None else lam
    traffic = TrafficSource(topo, pmf, lam_arg, eps, rng,
                            mode=config.destination_mode)
    if config.algorithm in ("bp", "mbp"):
        M = 0.0 if config.algorithm == "bp" else config.M
        return BackpressureEngine(topo, model, traffic, M=M,
                                  scheduler=config.scheduler, audit=config.audit)
    common = dict(M=config.M, beta=config.beta, router=config.router,
                  bucket_cap=config.resolved_bucket_cap(),
                  extra=config.extra_activation, rng=rng,
                  sigma_update_stride=config.sigma_update_stride,
                  audit=config.audit)
    if config.algorithm == "parn":
        return ParnEngine(topo, model, traffic, **common)
    return CodedParnEngine(topo, model, traffic, coding=True, **common)


@dataclass
class SlotMetrics:
    arrivals: int
    deliveries: int
    real_queue: int
    shadow_queue: int
    schedule_size: int


def run_slot(engine, slot: int) -> SlotMetrics:
    """Advance any engine one slot and report its per-slot counters."""
    return SlotMetrics(*engine.step(slot))


@dataclass
class StabilityResult:
    rho: list[float]
    rho_hat: list[float]
    verdicts: list[str]
    identity_error: float
    max_rho: float
    overall: str

    @classmethod
    def from_dict(cls, d: dict) -> "StabilityResult":
        return cls(**d)


def stability_oracle(sigma_bar: np.ndarray, eta: np.ndarray,
                     mu_bar: np.ndarray, epsilon: float,
                     delta_tol: float = 0.05) -> StabilityResult:
    """Per-link traffic-intensity verdicts from measured rates.

    rho = (real arrival rate summed over destinations) / (offered service
    rate); the theoretical prediction divides the shadow rate by (1+epsilon)
    instead. A link is stable when rho < 1 - delta_tol, idle when it carries
    nothing, and degenerate when packets arrive but it is never served. The
    identity error aggregates |eta - sigma_bar/(1+epsilon)| over all
    (link, destination) classes relative to the total shadow rate.
    """
    sigma_bar = np.asarray(sigma_bar, dtype=float)
    eta = np.asarray(eta, dtype=float)
    mu_bar = np.asarray(mu_bar, dtype=float)
    lam_link = eta.sum(axis=1)
    sig_link = sigma_bar.sum(axis=1)
    rho = np.zeros(len(mu_bar))
    rho_hat = np.zeros(len(mu_bar))
    verdicts = []
    for l in range(len(mu_bar)):
        if mu_bar[l] <= 0:
            if lam_link[l] > 0:
                verdicts.append("degenerate")
            else:
                verdicts.append("idle")
            continue
        rho[l] = lam_link[l] / mu_bar[l]
        rho_hat[l] = sig_link[l] / ((1.0 + epsilon) * mu_bar[l])
        verdicts.append("stable" if rho[l] < 1.0 - delta_tol else "unstable")
    num = np.abs(eta - sigma_bar / (1.0 + epsilon)).sum()
    identity_error = float(num / max(sigma_bar.sum(), 0.01))
    if lam_link.sum() == 0:
        overall = "no-traffic"
    elif "degenerate" in verdicts:
        overall = "degenerate"
    elif "unstable" in verdicts:
        overall = "unstable"
    else:
        overall = "stable"
    return StabilityResult(rho=[round(float(x), 12) for x in rho],
                           rho_hat=[round(float(x), 12) for x in rho_hat],
                           verdicts=verdicts,
                           identity_error=round(identity_error, 12),
                           max_rho=round(float(rho.max(initial=0.0)), 12),
                           overall=overall)


@dataclass
class LambdaReport:
    lam: float
    seed: int
    slots: int
    warmup: int
    arrivals: int            # whole-run real arrivals
    shadow_arrivals: int
    delivered: int           # whole-run deliveries
    throughput: float        # post-warmup deliveries per slot
    offered_rate: float      # post-warmup arrivals per slot
    mean_delay: float | None
    p50_delay: float | None
    p95_delay: float | None
    mean_total_queue: float  # over the last half of the run
    mean_shadow_queue: float
    mean_schedule_size: float
    transmissions: int
    token_saturation_rate: float
    wasted_token_rate: float
    queue_trend_ratio: float
    stability: StabilityResult | None
    queue_trace: list[int]

    @property
    def verdict(self) -> str:
        if self.arrivals == 0:
            return "no-traffic"
        if self.stability is not None:
            return self.stability.overall
        return "unstable" if self.queue_trend_ratio >= 2.0 else "stable"

    @classmethod
    def from_dict(cls, d: dict) -> "LambdaReport":
        d = dict(d)
        if d.get("stability") is not None:
            d["stability"] = StabilityResult.from_dict(d["stability"])
        return cls(**d)


@dataclass
class RunReport:
    schema: str
    config: dict
    entries: list[LambdaReport]

    def to_json(self) -> str:
        return json.dumps({"schema": self.schema, "config": self.config,
                           "entries": [asdict(e) for e in self.entries]},
                          indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        d = json.loads(text)
        return cls(schema=d["schema"], config=d["config"],
                   entries=[LambdaReport.from_dict(e) for e in d["entries"]])


CSV_COLUMNS = ["lambda", "mean_delay", "p50_delay", "p95_delay", "throughput",
               "offered_rate", "arrivals", "delivered", "mean_total_queue",
               "mean_shadow_queue", "mean_schedule_size", "transmissions",
               "token_saturation_rate", "wasted_token_rate", "max_rho",
               "identity_error", "queue_trend_ratio", "stability", "seed"]


def report_to_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for e in report.entries:
        st = e.stability
        writer.writerow([
            e.lam, _fmt(e.mean_delay), _fmt(e.p50_delay), _fmt(e.p95_delay),
            _fmt(e.throughput), _fmt(e.offered_rate), e.arrivals, e.delivered,
            _fmt(e.mean_total_queue), _fmt(e.mean_shadow_queue),
            _fmt(e.mean_schedule_size), e.transmissions,
            _fmt(e.token_saturation_rate), _fmt(e.wasted_token_rate),
            _fmt(st.max_rho if st else None),
            _fmt(st.identity_error if st else None),
            _fmt(e.queue_trend_ratio), e.verdict, e.seed,
        ])
    return buf.getvalue()


def _fmt(x):
    return "" if x is None else repr(round(float(x), 9))


def export(report: RunReport, fmt: str, path) -> None:
    """Write a report as 'csv' or 'json'."""
    if fmt == "json":
        text = report.to_json()
    elif fmt == "csv":
        text = report_to_csv(report)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)


def load_report(path) -> RunReport:
    with open(path) as fh:
        return RunReport.from_json(fh.read())


def _percentile(sorted_vals: list[int], q: float) -> float:
    # nearest-rank on a pre-sorted list
    idx = min(len(sorted_vals) - 1, max(0, math.ceil(q * len(sorted_vals)) - 1))
    return float(sorted_vals[idx])


def run_single(config: SimConfig, lam: float, index: int = 0,
               topology: Topology | None = None) -> LambdaReport:
    """Run one sweep point end to end and summarize it."""
    seed = derive_seed(config.seed, lam, index)
    engine = build_engine(config, lam, seed, topology=topology)
    slots = config.slots
    warmup = config.resolved_warmup()
    real_q = np.zeros(slots, dtype=np.int64)
    shadow_q = np.zeros(slots, dtype=np.int64)
    sched_sz = np.zeros(slots, dtype=np.int64)
    arrivals_total = 0
    for t in range(slots):
        if t == warmup:
            engine.begin_measurement()
        arr, _dlv, rq, sq, ss = engine.step(t)
        arrivals_total += arr
        real_q[t] = rq
        shadow_q[t] = sq
        sched_sz[t] = ss

    meas_slots = max(slots - warmup, 1)
    delays = sorted(engine.delays)
    half = slots // 2
    q2 = real_q[slots // 4: slots // 2]
    q4 = real_q[3 * slots // 4:]
    trend = float(q4.mean() / max(q2.mean(), 1e-9)) if len(q2) and len(q4) else 0.0

    stability = None
    is_parn = isinstance(engine, (ParnEngine, CodedParnEngine))
    if is_parn:
        stability = stability_oracle(
            engine.sigma_sum / meas_slots, engine.eta_sum / meas_slots,
            engine.mu_sum / meas_slots, engine.traffic.epsilon,
            delta_tol=config.delta_tol)
    routed = max(engine.measured_arrivals, 1)
    sat_rate = (engine.measured_saturation / routed) if is_parn else 0.0
    waste_rate = (engine.measured_wasted / meas_slots) if is_parn else 0.0

    delivered_total = (engine.real.delivered if is_parn else engine.queues.delivered)

    return LambdaReport(
        lam=lam, seed=seed, slots=slots, warmup=warmup,
        arrivals=arrivals_total,
        shadow_arrivals=engine.measured_shadow_arrivals if is_parn else 0,
        delivered=int(delivered_total),
        throughput=round(engine.measured_delivered / meas_slots, 12),
        offered_rate=round(engine.measured_arrivals / meas_slots, 12),
        mean_delay=round(float(np.mean(delays)), 12) if delays else None,
        p50_delay=_percentile(delays, 0.50) if delays else None,
        p95_delay=_percentile(delays, 0.95) if delays else None,
        mean_total_queue=round(float(real_q[half:].mean()), 12),
        mean_shadow_queue=round(float(shadow_q[half:].mean()), 12),
        mean_schedule_size=round(float(sched_sz[half:].mean()), 12),
        transmissions=int(engine.transmissions),
        token_saturation_rate=round(float(sat_rate), 12),
        wasted_token_rate=round(float(waste_rate), 12),
        queue_trend_ratio=round(trend, 12),
        stability=stability,
        queue_trace=_downsample(real_q),
    )


def _downsample(arr: np.ndarray, points: int = 512) -> list[int]:
    if len(arr) <= points:
        return [int(x) for x in arr]
    stride = len(arr) // points
    return [int(x) for x in arr[::stride][:points]]


def _run_single_args(args):
    config_dict, lam, index = args
    return run_single(SimConfig.from_dict(config_dict), lam, index)


def run_experiment(config: SimConfig) -> RunReport:
    """Sweep the configured lambda list; points are seed-isolated."""
    points = list(enumerate(config.lam))
    if config.workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            entries = list(pool.map(_run_single_args,
                                    [(config.to_dict(), lam, i) for i, lam in points]))
    else:
        topo = resolve_topology(config.topology)
        entries = [run_single(config, lam, i, topology=topo) for i, lam in points]
    return RunReport(schema=REPORT_SCHEMA, config=config.to_dict(), entries=entries)
