"""Speed evaluation: single-image latency, theoretical FLOPs, and the
cross-hardware normalization arithmetic.

Latency uses an injectable monotonic clock so the statistics are testable
without real timing; real measurements run single-image, inference mode,
with the debug validators off.  ``paper_compat`` reproduces the historical
intermediate rounding (best-case time to 2 decimals, throughput ratio to
an integer); exact mode is the default for new comparisons.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network, tensor
from .errors import ConfigError, FormatError


@dataclass(frozen=True)
class HardwareProfile:
    name: str
    throughput: float     # floating-point ops per second, e.g. 26.5e9
    cores: int = 1

    def validate(self) -> None:
        if self.throughput <= 0:
            raise ConfigError(f"profile {self.name!r}: throughput must be positive")
        if self.cores < 1:
            raise ConfigError(f"profile {self.name!r}: cores must be at least 1")


@dataclass
class BenchReport:
    network_id: str
    n_warmup: int
    n_runs: int
    latencies_ms: list = field(default_factory=list)
    mean_ms: float = 0.0
    std_ms: float = 0.0
    fps: float = 0.0
    flops_per_image: int = 0

    def to_text(self) -> str:
        return (
            f"network: {self.network_id}\n"
            f"warmup_runs: {self.n_warmup}\n"
            f"timed_runs: {self.n_runs}\n"
            f"mean_latency_ms: {self.mean_ms:.4f}\n"
            f"std_latency_ms: {self.std_ms:.4f}\n"
            f"fps: {self.fps:.2f}\n"
            f"flops_per_image: {self.flops_per_image}\n"
        )

    def runs_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write("run,latency_ms\n")
            for i, ms in enumerate(self.latencies_ms):
                f.write(f"{i},{ms!r}\n")


@dataclass
class NormalizedComparison:
    throughput_ratio: float
    total_ratio: float
    theirs_normalized_ms: float
    speedup: float

    def to_text(self) -> str:
        return (
            f"throughput_ratio: {self.throughput_ratio}\n"
            f"total_ratio: {self.total_ratio}\n"
            f"theirs_normalized_ms: {self.theirs_normalized_ms}\n"
            f"speedup: {self.speedup}\n"
        )


def fps(mean_latency_ms: float) -> float:
    """Frames per second sustainable at the given per-image latency."""
    if mean_latency_ms <= 0:
        raise ConfigError(f"latency must be positive, got {mean_latency_ms}")
    return 1000.0 / mean_latency_ms


def measure_latency(model: network.ModelState, n_warmup: int = 5, n_runs: int = 50,
                    clock=None, seed: int = 0) -> BenchReport:
    """Time single-image inference; warmup passes are discarded.

    ``clock`` must be a monotonic callable returning seconds (defaults to
    ``time.perf_counter``).
    """
    if n_runs < 1:
        raise ConfigError(f"need at least one timed run, got {n_runs}")
    if n_warmup < 0:
        raise ConfigError(f"warmup count must be non-negative, got {n_warmup}")
    if clock is None:
        clock = time.perf_counter
    hw = model.spec.input_hw
    rng = np.random.default_rng(seed)
    image = rng.random((1, hw, hw, network.INPUT_CHANNELS)).astype(tensor.active_dtype())
    timed = []
    with tensor.no_finite_checks():
        for _ in range(n_warmup + n_runs):
            t0 = clock()
            network.forward(model, image, training=False)
            t1 = clock()
            timed.append((t1 - t0) * 1000.0)
    latencies = timed[n_warmup:]
    mean = sum(latencies) / len(latencies)
    if len(latencies) > 1:
        var = sum((v - mean) ** 2 for v in latencies) / (len(latencies) - 1)
        std = var ** 0.5
    else:
        std = 0.0
    return BenchReport(
        network_id=model.spec.id,
        n_warmup=n_warmup,
        n_runs=n_runs,
        latencies_ms=latencies,
        mean_ms=mean,
        std_ms=std,
        fps=fps(mean),
        flops_per_image=count_flops(model.spec),
    )


def _pool_flops(in_shape, window: int, stride: int) -> int:
    """Comparisons over all (clipped) windows: window size minus one, each."""
    h, w, c = in_shape
    out_h = -(-(h - window) // stride) + 1
    out_w = -(-(w - window) // stride) + 1
    total = 0
    for oh in range(out_h):
        wh = min(oh * stride + window, h) - oh * stride
        for ow in range(out_w):
            ww = min(ow * stride + window, w) - ow * stride
            total += wh * ww - 1
    return total * c


def count_flops(spec: network.NetworkSpec) -> int:
    """Theoretical FLOPs of one single-image forward pass.

    conv: 2*kh*kw*Cin*Cout*Hout*Wout multiply-adds plus Cout*Hout*Wout bias
    adds; fc: 2*In*Out + Out.  The cheap layers count their elementwise
    work: relu one op per element, pooling one comparison per window slot
    beyond the first, LRN 2n+3 ops per element (n squares, n-1 adds,
    scale, add, power, divide), softmax 5C-2 per row.  Inference dropout
    and flatten are free.
    """
    total = 0
    for layer in spec.layers:
        if layer.kind == "conv":
            kh = layer.cfg["kernel"]
            cin = layer.in_shape[2]
            out_h, out_w, cout = layer.out_shape
            total += 2 * kh * kh * cin * cout * out_h * out_w + cout * out_h * out_w
        elif layer.kind == "fc":
            n_in = layer.in_shape[0]
            n_out = layer.cfg["units"]
            total += 2 * n_in * n_out + n_out
        elif layer.kind == "relu":
            total += int(np.prod(layer.out_shape))
        elif layer.kind == "maxpool":
            total += _pool_flops(layer.in_shape, layer.cfg["window"], layer.cfg["stride"])
        elif layer.kind == "lrn":
            total += int(np.prod(layer.out_shape)) * (2 * layer.cfg["depth"] + 3)
        elif layer.kind == "softmax":
            total += 5 * layer.out_shape[0] - 2
    return total


def best_case_time(reported_ms: float, search_w: int, search_h: int,
                   paper_compat: bool = False) -> float:
    """Reported full-pipeline time divided by its search-space size.

    Estimates the per-classification cost hiding inside a sliding-window
    detector's reported per-image time.  ``paper_compat`` rounds to two
    decimals, matching the historical chain.
    """
    if reported_ms <= 0 or search_w <= 0 or search_h <= 0:
        raise ConfigError("reported time and search dimensions must be positive")
    value = reported_ms / (search_w * search_h)
    return round(value, 2) if paper_compat else value


def normalize_comparison(ours_ms: float, ours: HardwareProfile, theirs_ms: float,
                         theirs: HardwareProfile, paper_compat: bool = False) -> NormalizedComparison:
    """Scale a foreign machine's latency onto ours by throughput and core count.

    throughput_ratio = theirs/ours ops-per-second (integer-rounded in
    paper_compat mode); total_ratio additionally multiplies the core-count
    ratio; the foreign time scaled by total_ratio is then compared with
    ours to yield the speedup.
    """
    ours.validate()
    theirs.validate()
    if ours_ms <= 0 or theirs_ms <= 0:
        raise ConfigError("latencies must be positive")
    throughput_ratio = theirs.throughput / ours.throughput
    if paper_compat:
        throughput_ratio = float(round(throughput_ratio))
    total_ratio = throughput_ratio * (theirs.cores / ours.cores)
    theirs_normalized_ms = theirs_ms * total_ratio
    return NormalizedComparison(
        throughput_ratio=throughput_ratio,
        total_ratio=total_ratio,
        theirs_normalized_ms=theirs_normalized_ms,
        speedup=theirs_normalized_ms / ours_ms,
    )


def load_profile(path) -> HardwareProfile:
    """Parse a ``name= / gflops= / cores=`` key-value profile file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"hardware profile not found: {path}")
    values = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}: line {line_no}: expected key=value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    try:
        profile = HardwareProfile(
            name=values["name"],
            throughput=float(values["gflops"]) * 1e9,
            cores=int(values.get("cores", "1")),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: missing required key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    profile.validate()
    return profile
