"""
Runtime and bandwidth sweep.

For every (n, ell) cell a network of n repeaters is registered, one honest
session is driven through it and the receiver's verification is timed over
repeated runs. Rows go to a CSV; a linear fit of receiver time against n is
reported per (ell, mode).

Examples
--------
>>> config = BenchConfig(node_counts=(10, 20), ells=(10,), repetitions=5, output="bench.csv")
>>> report = run_bench(config)             # doctest: +SKIP
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from tqdm.auto import tqdm

from .group import RandomSource, backend_name, setup
from .groth import issuer_key_gen
from .netsim import GraphSpec, RouteSpec, build_graph, run_session
from .policy import AttributeVector, Policy
from .protocol import Receiver
from .wire import payload_bytes

logger = logging.getLogger(__name__)

MODES = ("single-path", "multi-path")

COLUMNS = ["n", "ell", "d", "mode", "paths", "node_median_ms", "receiver_median_ms",
           "payload_bytes", "wire_bytes", "g1_exp", "g2_exp", "gt_exp", "pairings"]


@dataclass
class BenchConfig:
    """Sweep settings.

    `disclosed` is d; by default half of the attributes. `paths` is the
    number of disjoint paths used in multi-path mode.
    """
    node_counts: tuple = tuple(range(10, 101, 10))
    ells: tuple = (10, 20)
    mode: str = "single-path"
    repetitions: int = 5
    output: str = "bench.csv"
    seed: int = 0
    parallel: bool = False
    disclosed: int = None
    paths: int = 3
    quiet: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"Invalid mode {self.mode!r}. Valid options are: {list(MODES)}")
        if not self.node_counts:
            raise ValueError("node_counts must not be empty")
        if any(n < 1 for n in self.node_counts):
            raise ValueError("node counts must be >= 1")
        if self.repetitions < 3:
            raise ValueError("repetitions must be >= 3")
        for ell in self.ells:
            if ell < 1:
                raise ValueError("ell must be >= 1")
            if not 0 <= self.d_for(ell) <= ell:
                raise ValueError(f"d={self.d_for(ell)} must lie in [0, ell={ell}]")
        if self.mode == "multi-path" and self.paths < 2:
            raise ValueError("multi-path mode needs paths >= 2")

    def d_for(self, ell):
        return ell // 2 if self.disclosed is None else self.disclosed

    def cells(self):
        return [(n, ell) for ell in self.ells for n in self.node_counts]


def _split(n, k):
    """Path lengths summing to n, as even as possible."""
    k = min(k, n)
    return [n // k + (1 if i < n % k else 0) for i in range(k)]


def bench_network(n, ell, d, mode, paths, rng):
    """A ladder of disjoint repeater lines holding n nodes in total.

    Every node carries the same disclosed attribute values, so one policy
    fits all of them.
    """
    lengths = [n] if mode == "single-path" else _split(n, paths)
    lines, edges = [], []
    for i, m in enumerate(lengths):
        line = [f"p{i}n{j:03d}" for j in range(m)]
        edges += list(zip(line, line[1:]))
        lines.append(line)
    nodes = [v for line in lines for v in line]
    values = [int(x) for x in np.random.default_rng(rng.seed).integers(1, 2**31, size=ell)]
    attrs = {v: AttributeVector(values=tuple(values)) for v in nodes}
    spec = GraphSpec(nodes=nodes, edges=edges, sender=tuple(line[0] for line in lines),
                     receiver=tuple(line[-1] for line in lines), attrs=attrs)
    policy = Policy(policy_id=b"bench", ell=ell, required={i: values[i] for i in range(d)})
    return spec, RouteSpec(paths=lines), policy


def bench_cell(n, ell, d, mode="single-path", paths=3, repetitions=5, seed=0):
    """Measure one cell and return its CSV row as a dict."""
    rng = RandomSource(seed)
    params = setup(ell)
    spec, routes, policy = bench_network(n, ell, d, mode, paths, rng)
    g = build_graph(spec, spec.attrs, issuer_key_gen(params, rng), params=params, rng=rng)
    result = run_session(g, routes, policy, rng=rng)
    if not result.verdict.accepted:
        raise RuntimeError(f"benchmark session rejected: {result.verdict}")

    finals = result.transcript.decode()
    receiver = Receiver(g.params, g.pk_i, g.receiver_directory())
    exits = routes.exit_nodes
    # warm-up
    receiver.verify(finals, policy, exits)
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        receiver.verify(finals, policy, exits)
        times.append(time.perf_counter() - t0)

    ops = result.counters
    return {
        "n": n,
        "ell": ell,
        "d": d,
        "mode": mode,
        "paths": len(routes),
        "node_median_ms": 1000.0 * float(np.median(result.hop_seconds)),
        "receiver_median_ms": 1000.0 * float(np.median(times)),
        "payload_bytes": result.payload_bytes,
        "wire_bytes": sum(len(m) for m in result.transcript.messages),
        "g1_exp": ops.g1_exp,
        "g2_exp": ops.g2_exp,
        "gt_exp": ops.gt_exp,
        "pairings": ops.pairings,
    }


def _bench_cell_star(args):
    return bench_cell(*args)


def fit_receiver_time(report):
    """Least-squares line of receiver time against n per (ell, mode).

    Returns
    -------
    pandas.DataFrame
        Columns: ell, mode, slope_ms, intercept_ms, r2.
    """
    rows = []
    for (ell, mode), group in report.groupby(["ell", "mode"]):
        x = group["n"].to_numpy(dtype=float)
        y = group["receiver_median_ms"].to_numpy(dtype=float)
        if len(x) < 2:
            continue
        slope, intercept = np.polyfit(x, y, 1)
        residual = y - (slope * x + intercept)
        total = np.sum((y - y.mean()) ** 2)
        r2 = 1.0 - np.sum(residual ** 2) / total if total > 0 else 1.0
        rows.append({"ell": ell, "mode": mode, "slope_ms": slope, "intercept_ms": intercept,
                     "r2": r2})
    return pd.DataFrame(rows, columns=["ell", "mode", "slope_ms", "intercept_ms", "r2"])


def run_bench(config):
    """Run every cell of `config`, write the CSV and return the report.

    Returns
    -------
    (pandas.DataFrame, pandas.DataFrame)
        The per-cell report and the per-(ell, mode) linear fits.
    """
    jobs = [(n, ell, config.d_for(ell), config.mode, config.paths, config.repetitions,
             config.seed + k) for k, (n, ell) in enumerate(config.cells())]
    if not config.quiet:
        print(f"Benchmarking {len(jobs)} cells ({config.mode}, "
              f"{config.repetitions} repetitions, {backend_name()} curve backend)")
    if config.parallel:
        with ProcessPoolExecutor() as pool:
            rows = list(tqdm(pool.map(_bench_cell_star, jobs), total=len(jobs),
                             desc="Benchmark", disable=config.quiet))
    else:
        rows = [bench_cell(*job) for job in tqdm(jobs, desc="Benchmark", disable=config.quiet)]

    report = pd.DataFrame(rows, columns=COLUMNS)
    for row in report.itertuples():
        expected = payload_bytes(row.n, row.ell, row.d)
        if row.payload_bytes != expected:
            logger.warning("payload for n=%d ell=%d is %d bytes, expected %d",
                           row.n, row.ell, row.payload_bytes, expected)
    fits = fit_receiver_time(report)
    if config.output:
        report.to_csv(config.output, index=False)
        if not config.quiet:
            print(f"Wrote {config.output}")
    if not config.quiet:
        for fit in fits.itertuples():
            print(f"ell={fit.ell} {fit.mode}: {fit.slope_ms:.1f} ms per hop, R^2={fit.r2:.4f}")
    return report, fits
