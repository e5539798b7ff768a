"""Built-in 4-bus microgrid and the identification / validation scenarios.

Bus 1 hosts the grid-forming unit, buses 2-4 grid-following units and
bus 5 is the point of common coupling to the AC grid (a transformer link to
bus 2). Line ``14`` closes the ring between buses 1 and 4 and starts out of
service. Controller and line values are assumptions for the reduced model,
chosen so that the open-loop responses are well damped and the largest
validation disturbance keeps the frequency within a fraction of a hertz.
"""

from __future__ import annotations

import math

from pcsindy.der_models import GflParams, GfmParams, SystemConstants
from pcsindy.network import BusSpec, Event, GridInterface, InjectionProfile, Line, Network
from pcsindy.simulator import ExcitationSpec, MicrogridSystem, Scenario, balance_setpoints

TWO_PI = 2.0 * math.pi

IDENTIFICATION_WINDOW = 10.0
VALIDATION_END = 13.0

DEFAULT_GFM = GfmParams(omega_c=TWO_PI * 5.0, k_dp=TWO_PI * 1.2, p_set=0.0, bus_id=1)
DEFAULT_GFLS = (
    GflParams(k_p=1.0, k_i=15.0, omega_c=TWO_PI * 4.0, zeta=0.7, bus_id=2),
    GflParams(k_p=1.5, k_i=20.0, omega_c=TWO_PI * 5.0, zeta=0.8, bus_id=3),
    GflParams(k_p=1.0, k_i=12.0, omega_c=TWO_PI * 3.0, zeta=0.7, bus_id=4),
)


def default_network() -> Network:
    buses = (
        BusSpec(1, 1.0, "gfm"),
        BusSpec(2, 1.0, "gfl"),
        BusSpec(3, 1.0, "gfl"),
        BusSpec(4, 1.0, "gfl"),
        BusSpec(5, 1.0, "grid-interface"),
    )
    lines = (
        Line("12", 1, 2, 10.0),
        Line("23", 2, 3, 10.0),
        Line("34", 3, 4, 8.0),
        Line("25", 2, 5, 20.0),
        Line("14", 1, 4, 10.0, in_service=False),
    )
    injections = InjectionProfile(
        constant={2: -0.1, 3: -0.3, 4: 0.0},
        stochastic={2: 0.02, 3: 0.02, 4: 0.02},
        pv={4: 0.1},
    )
    return Network(buses, lines, injections, GridInterface(bus_id=5))


def default_system() -> MicrogridSystem:
    system = MicrogridSystem((DEFAULT_GFM,) + DEFAULT_GFLS, default_network(), SystemConstants(60.0))
    return balance_setpoints(system)


def validation_events() -> tuple[Event, ...]:
    return (
        Event(10.5, "load-step", 3, 0.7),
        Event(11.0, "pv-step", 4, 0.4),
        Event(11.5, "grid-connect", 5),
        Event(12.0, "grid-disconnect", 5),
        Event(12.5, "line-switch", "14", in_service=True),
    )


def identification_scenario(excitation_seed: int = 0, load_seed: int = 1,
                            duration: float = IDENTIFICATION_WINDOW) -> Scenario:
    return Scenario(
        duration=duration,
        excitation=ExcitationSpec(duration=IDENTIFICATION_WINDOW, seed=excitation_seed),
        load_seed=load_seed,
        name="identification",
    )


def validation_scenario(excitation_seed: int = 0, load_seed: int = 1) -> Scenario:
    """Excitation over the identification window, then the disturbance sequence.

    The first ten seconds coincide with :func:`identification_scenario` for
    the same seeds, so the validation window [10, 13] s continues the very
    run the model was identified on.
    """
    return Scenario(
        duration=VALIDATION_END,
        events=validation_events(),
        excitation=ExcitationSpec(duration=IDENTIFICATION_WINDOW, seed=excitation_seed),
        load_seed=load_seed,
        name="validation",
    )
