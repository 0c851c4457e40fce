"""Fixed-step simulation of plant, observers and compensated shadow plant.

Every step: evaluate attacks, form measurements, advance each observer
block, accumulate metrics at full rate, record a decimated trace row, then
advance the true plant, the attack-free reference and the compensated
shadow by explicit Euler.  The true plant only ever reads the attacks, so
observer estimates cannot leak into it.

The compensated shadow realizes the cleanup: its dynamics see
``d_x - d_x_hat`` and its output carries ``d_y - d_y_hat``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from ..errors import ConfigError, GridMismatch, NumericBlowup
from ..model import LinearPlant, build_wecc, eval_attack, DescriptorPowerNetwork
from ..nonlinear_observer import (CATALOG, NlConfig, linear_callbacks, nl_init,
                                  nl_observe_step, nl_reconstruct_dy)
from ..smo import AdaptiveGain, SmoConfig, design_smo, smo_estimates, smo_init, smo_step
from ..sparse import Dictionary, default_deadband, default_lambda, sr_init, sr_step
from ..stw_observer import design_stw, reconstruct_dx, reconstruct_dy, stw_init, stw_observe_step
from ..transforms import build_chain
from .config import ScenarioConfig

__all__ = ["SimTrace", "RunMetrics", "run_scenario", "compare_runs", "build_plant"]


# ---------------------------------------------------------------------------
# trace and metrics containers
# ---------------------------------------------------------------------------

@dataclass
class SimTrace:
    """Decimated time table; ``data[:, j]`` is column ``columns[j]``."""

    columns: List[str]
    data: np.ndarray
    dt: float = 0.0
    decimation: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).reshape(-1, len(self.columns))
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate trace column")

    def __len__(self):
        return self.data.shape[0]

    @property
    def t(self):
        return self.data[:, 0]

    def col(self, name):
        return self.data[:, self.columns.index(name)]

    def group(self, prefix):
        """Columns ``prefix1, prefix2, ...`` stacked as a 2-D array."""
        idx = [i for i, c in enumerate(self.columns)
               if c.startswith(prefix) and c[len(prefix):].isdigit()]
        idx.sort(key=lambda i: int(self.columns[i][len(prefix):]))
        return self.data[:, idx]

    def has(self, prefix):
        return self.group(prefix).shape[1] > 0

    def subsample(self, factor):
        return SimTrace(list(self.columns), self.data[::factor].copy(), self.dt,
                        self.decimation * factor, dict(self.meta))


@dataclass
class RunMetrics:
    """Window metrics of one run (see :meth:`as_dict` for the JSON layout)."""

    window: tuple
    dx_rmse: list = field(default_factory=list)
    dx_rel_rmse: list = field(default_factory=list)
    dy_rmse: list = field(default_factory=list)
    dy_rel_rmse: list = field(default_factory=list)
    x_rel_rmse: float = 0.0
    cleanup_ratio: list = field(default_factory=list)
    reaching_time: Dict[str, Optional[float]] = field(default_factory=dict)
    band: Dict[str, float] = field(default_factory=dict)
    gains: Dict[str, float] = field(default_factory=dict)
    sparse: Dict[str, object] = field(default_factory=dict)
    agreement: Dict[str, object] = field(default_factory=dict)
    runtime_s: float = 0.0
    steps: int = 0

    def as_dict(self):
        def clean(v):
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple, np.ndarray)):
                return [clean(x) for x in v]
            if isinstance(v, (np.floating, float)):
                return float(v)
            if isinstance(v, (np.integer,)):
                return int(v)
            return v
        return clean({
            "window": list(self.window), "dx_rmse": self.dx_rmse,
            "dx_rel_rmse": self.dx_rel_rmse, "dy_rmse": self.dy_rmse,
            "dy_rel_rmse": self.dy_rel_rmse, "x_rel_rmse": self.x_rel_rmse,
            "cleanup_ratio": self.cleanup_ratio, "reaching_time": self.reaching_time,
            "band": self.band, "gains": self.gains, "sparse": self.sparse,
            "agreement": self.agreement, "steps": self.steps,
        })


def _rel(err_sq, true_sq, count):
    """Relative RMSE per channel; falls back to the absolute RMSE when the truth is zero."""
    out = []
    for e, tr in zip(err_sq, true_sq):
        rmse = math.sqrt(e / count) if count else 0.0
        rms = math.sqrt(tr / count) if count else 0.0
        out.append(rmse / rms if rms > 0 else rmse)
    return out


class _Accum:
    """Running sums over the metric window."""

    def __init__(self, dim):
        self.err = np.zeros(dim)
        self.true = np.zeros(dim)

    def add(self, est, truth):
        d = est - truth
        self.err += d * d
        self.true += truth * truth


class _Band:
    """Tracks the last time a sliding variable was outside its band."""

    def __init__(self, width):
        self.width = width
        self.last_violation = -1
        self.ever_inside = False

    def update(self, k, value, width=None):
        w = self.width if width is None else width
        if value > w:
            self.last_violation = k
        else:
            self.ever_inside = True


# ---------------------------------------------------------------------------
# plants
# ---------------------------------------------------------------------------

class _LinearSim:
    def __init__(self, plant: LinearPlant, speed_feedback=0.0):
        self.plant = plant
        self.n, self.p = plant.n, plant.p
        self.m1 = plant.m1
        self.m2 = plant.D1.shape[1]
        self.prot = plant.protected_rows
        self.corr = plant.corrupted_rows
        self.k_fb = float(speed_feedback)
        if self.k_fb and self.m1 != self.corr.size:
            raise ConfigError("speed feedback needs one plant input per corrupted sensor",
                              key="plant.speed_feedback")

    def rate(self, x, d_x, y_meas=None):
        pl = self.plant
        dx = pl.A @ x + pl.bias
        u = d_x
        if self.k_fb and y_meas is not None:
            u = u - self.k_fb * y_meas[self.corr]
        if self.m1:
            dx = dx + pl.B1 @ u
        return dx

    def output(self, x, d_y):
        return self.plant.output(x, d_y)

    def clean_output(self, x):
        return self.plant.C @ x


class _NlSim:
    def __init__(self, demo):
        self.demo = demo
        self.n = demo.n
        self.m1, self.m2 = demo.m1, demo.m2
        p1 = len(demo.callbacks.r)
        self.p = p1 + (demo.m2 if demo.y2 is not None else 0)
        self.prot = np.arange(p1)
        self.corr = np.arange(p1, self.p)
        self.k_fb = 0.0

    def rate(self, x, d_x, y_meas=None):
        return self.demo.f(x, d_x)

    def output(self, x, d_y):
        y = [self.demo.y1(x)]
        if self.demo.y2 is not None:
            y.append(self.demo.y2(x) + self.demo.D1bar @ d_y)
        return np.concatenate(y)

    def clean_output(self, x):
        return self.output(x, np.zeros(self.m2))


def build_plant(cfg: ScenarioConfig):
    """``(sim, LinearPlant or None)`` from the ``[plant]`` section."""
    p = cfg["plant"]
    kind = p["type"]
    if kind == "wecc":
        net = DescriptorPowerNetwork.wecc(P_omega=p["P_omega"], P_theta=p["P_theta"])
        plant = build_wecc(net, plant_attack=p["plant_attack"], sensor_attack=p["sensor_attack"])
        return _LinearSim(plant, p["speed_feedback"]), plant
    if kind == "linear-custom":
        n = p["A"].shape[0]
        D1 = p["D1"] if p["D1"] is not None else np.zeros((p["C"].shape[0], 0))
        try:
            plant = LinearPlant(A=p["A"], B1=p["B1"].reshape(n, -1), C=p["C"], D1=D1,
                                bias=p["bias"], sparse_d1=p["sparse_d1"],
                                open_loop_unstable=p["open_loop_unstable"])
        except ValueError as exc:
            raise ConfigError(str(exc), key="plant") from exc
        return _LinearSim(plant, p["speed_feedback"]), plant
    builder = CATALOG[p["model"]]
    demo = builder(p["u0"]) if p["model"] == "scalar-chain" else builder()
    return _NlSim(demo), None


# ---------------------------------------------------------------------------
# observer blocks
# ---------------------------------------------------------------------------

class _Block:
    name = ""
    x_hat = None
    dx_hat = None
    dy_hat = None
    residual = None

    def sliding(self):
        """``[(name, value, band_gain)]`` for every sliding variable."""
        return []

    def gains(self):
        return {}


class _StwBlock(_Block):
    name = "stw"

    def __init__(self, cfg, sim, plant, dt):
        s = cfg["stw"]
        self.plant = plant
        self.design = design_stw(plant.A, plant.B1, plant.C1, plant.bias, rho_c=s["rho_c"],
                                 L_b=s["lipschitz"], poles=s["poles"], tau_f=s["tau_f"],
                                 filter_order=s["filter_order"], delta_reg=s["delta_reg"],
                                 epsilon_act=s["epsilon_act"])
        x0 = None
        self.state = stw_init(self.design, x0=x0, dt=dt)
        self.prot, self.corr = sim.prot, sim.corr
        self.D1bar = plant.D1bar
        self.C2 = plant.C2
        self._estimates(None)

    def _estimates(self, y):
        self.x_hat = self.state.x_hat
        self.dx_hat = reconstruct_dx(self.state, self.design)
        if y is not None and self.corr.size and self.D1bar.shape[1]:
            r = reconstruct_dy(y[self.corr], self.x_hat, self.D1bar, self.C2)
            if self.D1bar.shape[1] > self.D1bar.shape[0]:
                self.residual, self.dy_hat = r, None
            else:
                self.residual, self.dy_hat = None, r

    def step(self, y, dt):
        # estimates reported for this step use the state before the update
        self._estimates(y)
        self.state = stw_observe_step(self.state, self.design, y[self.prot], dt)

    def sliding(self):
        st = self.state
        out = [("stw", float(np.linalg.norm(st.s)), self.design.rho_c)]
        ra = self.design.profile.r_alpha
        for j, (sj, cell) in enumerate(zip(st.cascade.last_s, st.cascade.cells)):
            for i in range(len(ra)):
                if ra[i] > j + 1:
                    out.append((f"cell{j + 1}_{i + 1}", abs(float(sj[i])), float(cell.beta_s[i])))
        return out

    def gains(self):
        return {"stw_vc": float(np.linalg.norm(self.state.v_c))}


class _SmoBlock(_Block):
    name = "smo"

    def __init__(self, cfg, sim, plant, dt):
        s = cfg["smo"]
        if plant.m1:
            raise ConfigError("the unit-vector observer needs a sensor-only attack layout "
                              "(set plant_attack = false)", key="observer.blocks")
        try:
            self.chain = build_chain(plant, poles=s["poles"])
        except ValueError as exc:
            raise ConfigError(str(exc), key="smo") from exc
        ad = None
        if s["adaptive"]:
            ad = AdaptiveGain(alpha=s["alpha"], epsilon=s["epsilon"], sigma0=s["sigma0"],
                              gamma=s["gamma"], ell0=s["ell0"], rho_init=s["rho_init"],
                              r_init=s["r_init"], a1=s["a1"], q=s["q"])
        self.adaptive = ad

        def diag(v, size):
            if v is None:
                return None
            v = np.atleast_2d(v)
            return v[0, 0] * np.eye(size) if v.size == 1 else v

        k, q, m = self.chain.sizes
        conf = SmoConfig(A22s=diag(s["A22s"], q), A33s=diag(s["A33s"], m), rho=s["rho"],
                         eta=s["eta"], adaptive=ad, tau_f=s["tau_f"],
                         filter_order=s["filter_order"], delta_reg=s["delta_reg"])
        self.design = design_smo(self.chain, conf)
        self.state = smo_init(self.design, dt=dt)
        self.eta = s["eta"]
        self._estimates()

    def _estimates(self):
        self.x_hat, d = smo_estimates(self.state, self.design)
        self.dy_hat = d
        self.dx_hat = np.zeros(0)

    def step(self, y, dt):
        self._estimates()
        y1, y2 = self.chain.scale_output(y)
        self._gain_used = self.state.rho_t + self.eta
        self.state = smo_step(self.state, self.design, y1, y2, dt)

    def sliding(self):
        return [("smo", self.state.e_norm, self._gain_used)]

    def gains(self):
        st = self.state
        g = {"smo_rho": st.rho_t, "smo_v": float(np.linalg.norm(st.v))}
        if self.adaptive is not None:
            g.update(smo_ell=st.ell_t, smo_r=self.adaptive.ell0 + st.ell_t, smo_sigma=st.sigma)
        return g


class _NlBlock(_Block):
    name = "nl"

    def __init__(self, cfg, sim, plant, dt):
        s = cfg["nl"]
        if plant is not None:
            self.cb = linear_callbacks(plant.A, plant.B1, plant.C1, plant.bias)
            self.D1bar, self.C2 = plant.D1bar, plant.C2
        else:
            self.cb = sim.demo.callbacks
            self.D1bar, self.C2 = sim.demo.D1bar, self.cb.C2
        self.prot, self.corr = sim.prot, sim.corr
        conf = NlConfig(L_lip=s["lipschitz"], tau_f=s["tau_f"], filter_order=s["filter_order"],
                        gamma0=s["gamma0"])
        self.state = nl_init(self.cb, conf, y0=np.zeros(len(self.cb.r)))
        self.lam0 = self.state.first_gains
        self._y = None
        self._estimates(None)

    def _estimates(self, y):
        self.x_hat = self.state.x_hat
        self.dx_hat = self.state.d_hat
        if y is not None and self.corr.size and self.D1bar is not None and self.D1bar.shape[1]:
            if self.D1bar.shape[1] > self.D1bar.shape[0]:
                self.residual = y[self.corr] - self.C2 @ self.x_hat
            else:
                self.dy_hat = nl_reconstruct_dy(y[self.corr], self.x_hat, self.D1bar, self.C2)

    def step(self, y, dt):
        self._estimates(y)
        self._y = y[self.prot]
        self._err = self.state.output_estimates - self._y
        self.state = nl_observe_step(self.state, self.cb, self._y, dt)

    def sliding(self):
        return [(f"nl{i + 1}", abs(float(e)), float(l)) for i, (e, l) in enumerate(zip(self._err, self.lam0))]


class _SparseBlock(_Block):
    name = "sparse"

    def __init__(self, cfg, sim, plant, dt, source):
        s = cfg["sparse"]
        if plant is None or plant.D1bar.shape[1] <= plant.D1bar.shape[0]:
            raise ConfigError("sparse recovery needs more sensor-attack sources than sensors",
                              key="observer.blocks")
        self.source = source
        self.dic = Dictionary.from_matrix(plant.D1bar, normalize=s["normalize"])
        N = self.dic.Phi.shape[1]
        self.lam = s["lam"]
        db = s["deadband"]
        if db is None:
            db = default_deadband(dt, s["mu"], s["beta"])
        self.state = sr_init(N, mu=s["mu"], lam=self.lam if self.lam else 1.0, beta=s["beta"],
                             deadband=db)
        self.G = self.dic.Phi.T @ self.dic.Phi - np.eye(N)
        self.dy_hat = np.zeros(N)
        self.a = np.zeros(N)

    def step(self, y, dt):
        xi = self.source.residual
        st = self.state
        lam = self.lam if self.lam is not None else default_lambda(self.dic.Phi, xi)
        if lam != st.lam:
            st = replace(st, lam=lam)
        self.a = st.a
        self.dy_hat = self.dic.rescale(self.a)
        self.state = sr_step(st, self.dic.Phi, xi, dt, self.G)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _make_blocks(cfg, sim, plant, dt):
    blocks = {}
    order = [b for b in ("stw", "smo", "nl") if b in cfg.blocks]
    if plant is None and any(b != "nl" for b in cfg.blocks):
        raise ConfigError("catalog plants support only the nl observer", key="observer.blocks")
    for b in order:
        cls = {"stw": _StwBlock, "smo": _SmoBlock, "nl": _NlBlock}[b]
        blocks[b] = cls(cfg, sim, plant, dt)
    if "sparse" in cfg.blocks:
        blocks["sparse"] = _SparseBlock(cfg, sim, plant, dt, blocks[cfg["sparse"]["source"]])
    return blocks


def _check_attack_dims(cfg, sim):
    if cfg.dx_declared > sim.m1:
        raise ConfigError(f"plant has {sim.m1} state-attack channels", key=f"attack.dx{cfg.dx_declared}")
    if cfg.dy_declared > sim.m2:
        raise ConfigError(f"plant has {sim.m2} sensor-attack channels", key=f"attack.dy{cfg.dy_declared}")


def _pad(sig, dim):
    from ..model import AttackSignal
    ch = tuple(sig.channels) + ((),) * (dim - sig.dimension)
    return AttackSignal(ch, gate=sig.gate)


def run_scenario(cfg: ScenarioConfig, progress=None):
    """Simulate one scenario.

    Returns
    -------
    trace : SimTrace
    metrics : RunMetrics
    """
    t_start = time.perf_counter()
    dt = cfg.dt
    N = cfg.steps
    dec = cfg["outputs"]["decimation"]
    sim, plant = build_plant(cfg)
    _check_attack_dims(cfg, sim)
    dx_sig = _pad(cfg.dx, sim.m1)
    dy_sig = _pad(cfg.dy, sim.m2)
    need_x = dx_sig.needs_state or dy_sig.needs_state
    blocks = _make_blocks(cfg, sim, plant, dt)
    primary_name = cfg["observer"]["primary"]
    primary = blocks.get(primary_name)
    sparse = blocks.get("sparse")
    rng = np.random.default_rng(cfg["integration"]["seed"])
    noise = cfg["integration"]["noise_std"]

    n, p, m1, m2 = sim.n, sim.p, sim.m1, sim.m2
    x0 = cfg["plant"]["x0"]
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    if x.shape != (n,):
        raise ConfigError(f"x0 must have {n} entries", key="plant.x0")
    x_ref = x.copy()
    x_comp = x.copy()

    zero_m1, zero_m2 = np.zeros(m1), np.zeros(m2)
    w0, w1 = cfg.window
    band_factor = cfg["metrics"]["band_factor"]

    # column layout
    cols = ["t"]
    cols += [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(p)]
    cols += [f"xhat{i + 1}" for i in range(n)]
    cols += [f"dx_true{i + 1}" for i in range(m1)] + [f"dx_hat{i + 1}" for i in range(m1)]
    cols += [f"dy_true{i + 1}" for i in range(m2)] + [f"dy_hat{i + 1}" for i in range(m2)]
    sl_names = [s[0] for b in blocks.values() for s in _initial_sliding(b)]
    cols += [f"s_{s}" for s in sl_names]
    gain_names = [g for b in blocks.values() for g in b.gains()]
    cols += [f"g_{g}" for g in gain_names]
    cols += [f"yclean{i + 1}" for i in range(p)] + [f"yref{i + 1}" for i in range(p)]
    aux_blocks = [b for name, b in blocks.items() if name not in (primary_name, "sparse")]
    for b in aux_blocks:
        cols += [f"{b.name}_xhat{i + 1}" for i in range(n)]
        if m1:
            cols += [f"{b.name}_dxhat{i + 1}" for i in range(m1)]
    rows = []

    acc_dx, acc_dy, acc_x = _Accum(m1), _Accum(m2), _Accum(n)
    acc_clean, acc_corr = np.zeros(p), np.zeros(p)
    acc_sparse = np.zeros(m2)
    agree = {b.name: (_Accum(n), _Accum(m1)) for b in aux_blocks}
    count = 0
    bands: Dict[str, _Band] = {}
    gmax: Dict[str, float] = {}
    ell_prev, ell_monotone = None, True
    sigma_last_bad, eps_half = -1, None
    smo_blk = blocks.get("smo")
    if smo_blk is not None and smo_blk.adaptive is not None:
        eps_half = smo_blk.adaptive.epsilon / 2

    for k in range(N + 1):
        t = k * dt
        xs = x if need_x else None
        d_x = eval_attack(dx_sig, t, xs) if m1 else zero_m1
        d_y = eval_attack(dy_sig, t, xs) if m2 else zero_m2
        y = sim.output(x, d_y)
        y_ref = sim.clean_output(x_ref)
        y_obs = y + rng.normal(0.0, noise, p) if noise > 0 else y

        for b in blocks.values():
            b.step(y_obs, dt)

        if primary is not None:
            x_hat = primary.x_hat
            dx_hat = primary.dx_hat if m1 else zero_m1
            if sparse is not None:
                dy_hat = sparse.dy_hat
            elif primary.dy_hat is not None and m2:
                dy_hat = primary.dy_hat
            else:
                dy_hat = zero_m2
        else:
            x_hat, dx_hat, dy_hat = np.zeros(n), zero_m1, zero_m2

        y_clean = sim.output(x_comp, d_y - dy_hat)

        # full-rate metrics
        in_win = w0 <= t <= w1 + 1e-12
        sl = [s for b in blocks.values() for s in b.sliding()]
        for name, val, gain in sl:
            bd = bands.get(name)
            if bd is None:
                bd = bands[name] = _Band(band_factor * dt * gain)
            bd.update(k, val, band_factor * dt * gain)
        gains_now = {g: v for b in blocks.values() for g, v in b.gains().items()}
        for g, v in gains_now.items():
            if g in ("smo_sigma",):
                continue
            gmax[g] = max(gmax.get(g, -np.inf), v)
        if "smo_ell" in gains_now:
            ell = gains_now["smo_ell"]
            if ell_prev is not None and ell < ell_prev:
                ell_monotone = False
            ell_prev = ell
        if eps_half is not None and abs(gains_now.get("smo_sigma", 0.0)) >= eps_half and k > 0:
            sigma_last_bad = k
        if in_win:
            count += 1
            if m1:
                acc_dx.add(dx_hat, d_x)
            if m2:
                acc_dy.add(dy_hat, d_y)
            acc_x.add(x_hat, x)
            dc = y_clean - y_ref
            dr = y - y_ref
            acc_clean += dc * dc
            acc_corr += dr * dr
            if sparse is not None:
                acc_sparse += sparse.dy_hat * sparse.dy_hat
            for b in aux_blocks:
                ax, ad = agree[b.name]
                ax.add(b.x_hat, x_hat)
                if m1:
                    ad.err += (b.dx_hat - dx_hat) ** 2
                    ad.true += d_x * d_x

        chk = float(x.sum() + x_hat.sum() + dx_hat.sum() + dy_hat.sum() + y_clean.sum())
        if not math.isfinite(chk):
            raise NumericBlowup(f"non-finite value at step {k} (t = {t:.6g} s)", step=k)

        if k % dec == 0:
            row = [t, *x, *y, *x_hat, *d_x, *dx_hat, *d_y, *dy_hat]
            row += [v for _, v, _ in sl]
            row += [gains_now[g] for g in gain_names]
            row += [*y_clean, *y_ref]
            for b in aux_blocks:
                row += list(b.x_hat)
                if m1:
                    row += list(b.dx_hat)
            rows.append(row)
        if progress is not None and k % max(N // 20, 1) == 0:
            progress(k, N)

        if k == N:
            break
        x_next = x + dt * sim.rate(x, d_x, y)
        x_ref = x_ref + dt * sim.rate(x_ref, zero_m1, y_ref)
        x_comp = x_comp + dt * sim.rate(x_comp, d_x - dx_hat, y_clean)
        x = x_next

    trace = SimTrace(cols, np.array(rows, dtype=float), dt, dec,
                     meta={"scenario": cfg.name, "primary": primary_name, "steps": N})
    metrics = RunMetrics(window=(w0, w1), steps=N)
    metrics.dx_rmse = [math.sqrt(e / count) if count else 0.0 for e in acc_dx.err]
    metrics.dx_rel_rmse = _rel(acc_dx.err, acc_dx.true, count)
    metrics.dy_rmse = [math.sqrt(e / count) if count else 0.0 for e in acc_dy.err]
    metrics.dy_rel_rmse = _rel(acc_dy.err, acc_dy.true, count)
    ex, tx = float(acc_x.err.sum()), float(acc_x.true.sum())
    metrics.x_rel_rmse = math.sqrt(ex / tx) if tx > 0 else math.sqrt(ex / max(count, 1))
    metrics.cleanup_ratio = [math.sqrt(c / r) if r > 0 else 0.0 for c, r in zip(acc_clean, acc_corr)]
    for name, bd in bands.items():
        if bd.last_violation == N:
            rt = None
        else:
            rt = (bd.last_violation + 1) * dt
        metrics.reaching_time[name] = rt
        metrics.band[name] = bd.width
    metrics.gains = {f"max_{g}": v for g, v in gmax.items()}
    if ell_prev is not None:
        metrics.gains["ell_nondecreasing"] = ell_monotone
    if eps_half is not None:
        metrics.gains["sigma_entry_time"] = None if sigma_last_bad == N else (sigma_last_bad + 1) * dt
        metrics.gains["epsilon_half"] = eps_half
    if sparse is not None:
        rms = np.sqrt(acc_sparse / max(count, 1))
        top = float(rms.max()) if rms.size else 0.0
        thr = cfg["metrics"]["support_threshold"]
        support = [i + 1 for i, v in enumerate(rms) if top > 0 and v >= thr * top]
        metrics.sparse = {
            "channel_rms": rms.tolist(),
            "support": support,
            "off_support_ratio": [float(v / top) if top > 0 else 0.0 for v in rms],
            "lambda": sparse.lam,
        }
    for b in aux_blocks:
        ax, ad = agree[b.name]
        ex, tx = float(ax.err.sum()), float(acc_x.true.sum())
        metrics.agreement[b.name] = {
            "x_rel_rmse": math.sqrt(ex / tx) if tx > 0 else 0.0,
            "dx_rel_rmse": _rel(ad.err, ad.true, count) if m1 else [],
        }
    metrics.runtime_s = time.perf_counter() - t_start
    return trace, metrics


def _initial_sliding(block):
    # sliding variables are known only after a step; probe lists names from the design
    if isinstance(block, _StwBlock):
        ra = block.design.profile.r_alpha
        names = [("stw", 0.0, 0.0)]
        for j in range(max(ra) - 1):
            names += [(f"cell{j + 1}_{i + 1}", 0.0, 0.0) for i in range(len(ra)) if ra[i] > j + 1]
        return names
    if isinstance(block, _SmoBlock):
        return [("smo", 0.0, 0.0)]
    if isinstance(block, _NlBlock):
        return [(f"nl{i + 1}", 0.0, 0.0) for i in range(len(block.cb.r))]
    return []


def compare_runs(trace_attacked: SimTrace, trace_ref: SimTrace, window=None):
    """Per-channel distances of corrupted and compensated outputs to a reference run.

    Returns a dict with ``corrupted`` and ``compensated`` RMS distances per
    output channel and their ratio.
    """
    ta, tr = trace_attacked.t, trace_ref.t
    if ta.shape != tr.shape or not np.array_equal(ta, tr):
        raise GridMismatch("traces are not on the same time grid")
    mask = np.ones(ta.shape, bool) if window is None else (ta >= window[0]) & (ta <= window[1] + 1e-12)
    y_att = trace_attacked.group("y")[mask]
    y_ref = trace_ref.group("y")[mask]
    y_cln = trace_attacked.group("yclean")[mask]
    if y_att.shape != y_ref.shape:
        raise GridMismatch("traces have different output dimensions")
    corrupted = np.sqrt(np.mean((y_att - y_ref) ** 2, axis=0)) if mask.any() else np.zeros(y_att.shape[1])
    compensated = np.sqrt(np.mean((y_cln - y_ref) ** 2, axis=0)) if mask.any() else np.zeros(y_att.shape[1])
    ratio = np.where(corrupted > 0, compensated / np.where(corrupted > 0, corrupted, 1.0), 0.0)
    ref_rms = np.sqrt(np.mean(y_ref ** 2, axis=0)) if mask.any() else np.zeros(y_att.shape[1])
    return {"corrupted": corrupted.tolist(), "compensated": compensated.tolist(),
            "ratio": ratio.tolist(), "reference_rms": ref_rms.tolist()}
