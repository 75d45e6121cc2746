"""Benchmark problems, keyed by the names the CLI accepts."""

from dataclasses import dataclass, field
from typing import Callable, Dict

from projilqr.systems.double_integrator import make_double_integrator
from projilqr.systems.planar_arm import make_planar_arm
from projilqr.systems.point_mass import make_point_mass_surface
from projilqr.systems.random_lq import dense_kkt_oracle, make_random_constrained_lq

__all__ = [
    "CATALOG",
    "SystemCatalogEntry",
    "dense_kkt_oracle",
    "get_entry",
    "make_double_integrator",
    "make_planar_arm",
    "make_point_mass_surface",
    "make_random_constrained_lq",
]


def _lqr_policy(ocp):
    from projilqr.solver import lqr_initial_policy

    return lqr_initial_policy(ocp, ocp.metadata.get("u_ss"))


def _zero_policy(ocp):
    from projilqr.solver import zero_policy

    return zero_policy(ocp)


@dataclass(frozen=True)
class SystemCatalogEntry:
    """A named problem factory.

    ``factory(horizon_steps, dt, **params)`` builds the problem;
    ``initial_policy(ocp)`` returns a stabilizing starting policy.
    """

    name: str
    factory: Callable
    initial_policy: Callable
    relative_degree: str
    description: str
    horizon: float = 3.0
    dt: float = 0.01
    linear_quadratic: bool = False
    params: dict = field(default_factory=dict)

    def build(self, N=None, dt=None, **params):
        dt = self.dt if dt is None else dt
        N = int(round(self.horizon / dt)) if N is None else N
        return self.factory(N=N, dt=dt, **{**self.params, **params})


def _random_lq(N, dt, seed=1, m=4, p=3, **kw):
    return make_random_constrained_lq(seed, m=m, p=p, N=N, **kw)


CATALOG: Dict[str, SystemCatalogEntry] = {
    e.name: e
    for e in [
        SystemCatalogEntry(
            "double_integrator", lambda N, dt, **kw: make_double_integrator("none", N, dt, **kw),
            _zero_policy, "unconstrained", "1D double integrator, no constraints",
            horizon=5.0, dt=0.1, linear_quadratic=True),
        SystemCatalogEntry(
            "double_integrator_state",
            lambda N, dt, **kw: make_double_integrator("state", N, dt, **kw),
            _zero_policy, "1 (exact ZOH: C B = dt^2/2 per axis)",
            "2D double integrator with positions held on p1 = p2",
            horizon=5.0, dt=0.1, linear_quadratic=True),
        SystemCatalogEntry(
            "double_integrator_state_input",
            lambda N, dt, **kw: make_double_integrator("state_input", N, dt, **kw),
            _zero_policy, "state-input only", "2D double integrator with u1 - u2 + v1 = 0",
            horizon=5.0, dt=0.1, linear_quadratic=True),
        SystemCatalogEntry(
            "euler_double_integrator",
            lambda N, dt, **kw: make_double_integrator("state", N, dt, euler=True, **kw),
            _zero_policy, "2 (explicit Euler hides the input from the position constraint)",
            "position-constrained double integrator discretized by explicit Euler",
            horizon=5.0, dt=0.1, linear_quadratic=True),
        SystemCatalogEntry(
            "point_mass_surface", make_point_mass_surface, _lqr_policy,
            "1 under RK4 (C B ~ dt^2/2m)",
            "3D point mass on y sin(2 pi x) - x cos(2 pi y) - z = 0", horizon=3.0, dt=0.01),
        SystemCatalogEntry(
            "planar_arm", make_planar_arm, _lqr_policy, "1 under RK4",
            "2-link planar arm, end effector on a line through its start", horizon=3.0, dt=0.01),
        SystemCatalogEntry(
            "random_lq", _random_lq, _zero_policy, "1 by rejection sampling",
            "seeded random constrained LQ problem", horizon=20.0, dt=1.0,
            linear_quadratic=True),
    ]
}


def get_entry(name: str) -> SystemCatalogEntry:
    try:
        return CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(CATALOG)}") from None
