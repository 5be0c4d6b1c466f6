"""Per-iteration run records shared by the batch and stochastic solvers."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

CSV_HEADER = "t,phi,delta,updated_clusters,eta_min,eta_max"


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


@dataclass
class RunTrace:
    """One row per executed iteration.

    ``phi`` holds NaN where the full cost was not evaluated, ``delta`` holds
    NaN when no reference solution was supplied. ``eta`` rows hold NaN for
    clusters that were not updated at that iteration.
    """

    k: int
    seed: int | None = None
    config_digest: str = ""
    phi0: float = math.nan
    delta0: float = math.nan
    t: list = field(default_factory=list)
    phi: list = field(default_factory=list)
    delta: list = field(default_factory=list)
    n_hat: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    events: list = field(default_factory=list)
    stopped_reason: str = ""

    def append(self, t, phi, n_hat, eta, delta=math.nan):
        self.t.append(int(t))
        self.phi.append(float(phi))
        self.delta.append(float(delta))
        self.n_hat.append(np.asarray(n_hat, dtype=np.int64))
        self.eta.append(np.asarray(eta, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.t)

    def phi_array(self) -> np.ndarray:
        return np.asarray(self.phi, dtype=np.float64)

    def t_array(self) -> np.ndarray:
        return np.asarray(self.t, dtype=np.int64)

    def delta_array(self) -> np.ndarray:
        return np.asarray(self.delta, dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for t, phi, dv, nh, eta in zip(self.t, self.phi, self.delta, self.n_hat, self.eta):
            upd = eta[~np.isnan(eta)]
            lo = _fmt(upd.min()) if upd.size else ""
            hi = _fmt(upd.max()) if upd.size else ""
            buf.write(f"{t},{_fmt(phi)},{_fmt(dv)},{int(np.count_nonzero(nh))},{lo},{hi}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Load a trace CSV into column arrays (empty fields become NaN)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        cols: dict[str, list] = {h: [] for h in header}
        for line in fh:
            for h, tok in zip(header, line.rstrip("\n").split(",")):
                cols[h].append(float(tok) if tok else math.nan)
    return {h: np.asarray(v) for h, v in cols.items()}
