from __future__ import annotations

import numpy as np

from radau_refine.problem import AeroModel, OcpDefinition, TimeSpec

ARM_LENGTH = 5.0

# final-time bounds and starting guess of the minimum-time problems
TF_BOUNDS = (1e-3, 1e4)
ROBOT_ARM_TF_GUESS = 10.0
CLIMB_TF_GUESS = 300.0


def _minimum_time(x0, t0, xf, tf):
    return tf


def robot_arm_inertia(rho, length: float = ARM_LENGTH):
    """I_phi(rho) = ((L - rho)^3 + rho^3) / 3."""
    rho = np.asarray(rho, dtype=float)
    return ((length - rho) ** 3 + rho**3) / 3.0


def robot_arm(length: float = ARM_LENGTH) -> OcpDefinition:
    """
    Minimum-time reorientation of a robot arm.

    States are (rho, theta, phi, rho_dot, theta_dot, phi_dot), controls
    (u_rho, u_theta, u_phi) bounded by +-1; the optimal control is bang-bang.
    """

    def dynamics(x, u, tau):
        rho, phi = x[0], x[2]
        inertia = robot_arm_inertia(rho, length)
        return np.array(
            [
                x[3],
                x[4],
                x[5],
                u[0] / length,
                u[1] / (inertia * np.sin(phi) ** 2),
                u[2] / inertia,
            ]
        )

    return OcpDefinition(
        n_x=6,
        n_u=3,
        dynamics=dynamics,
        mayer=_minimum_time,
        initial_state=[4.5, 0.0, np.pi / 4, 0.0, 0.0, 0.0],
        final_state=[4.5, 2.0 * np.pi / 3, np.pi / 4, 0.0, 0.0, 0.0],
        state_lower=[0.0, -np.pi, 0.0, -np.inf, -np.inf, -np.inf],
        state_upper=[length, np.pi, np.pi, np.inf, np.inf, np.inf],
        control_lower=[-1.0, -1.0, -1.0],
        control_upper=[1.0, 1.0, 1.0],
        t0=TimeSpec.fixed(0.0),
        tf=TimeSpec.free(*TF_BOUNDS, guess=ROBOT_ARM_TF_GUESS),
        name="robot_arm",
        state_names=["rho", "theta", "phi", "rho_dot", "theta_dot", "phi_dot"],
        control_names=["u_rho", "u_theta", "u_phi"],
    )


def hyper_sensitive(tf: float = 10000.0) -> OcpDefinition:
    """Hyper-sensitive problem: x' = -x^3 + u, x(0) = 1.5, x(tf) = 1, cost (x^2 + u^2) / 2."""
    if tf <= 0:
        raise ValueError(f"Hyper-sensitive final time must be positive, got {tf}")

    def dynamics(x, u, tau):
        return np.array([-x[0] ** 3 + u[0]])

    def lagrange(x, u, tau):
        return 0.5 * (x[0] ** 2 + u[0] ** 2)

    return OcpDefinition(
        n_x=1,
        n_u=1,
        dynamics=dynamics,
        lagrange=lagrange,
        initial_state=[1.5],
        final_state=[1.0],
        t0=TimeSpec.fixed(0.0),
        tf=TimeSpec.fixed(tf),
        name="hyper_sensitive",
        state_names=["x"],
        control_names=["u"],
    )


def supersonic_climb(aero: AeroModel) -> OcpDefinition:
    """
    Minimum-time climb of a supersonic aircraft with a user-supplied aero model.

    States are altitude h, speed v and flight path angle gamma; the control is
    the load factor n. The flight path angle stays within [0, pi/2].
    """
    g = aero.gravity
    m = aero.mass

    def dynamics(x, u, tau):
        h, v, gamma = x[0], x[1], x[2]
        return np.array(
            [
                v * np.sin(gamma),
                (aero.thrust(h, v) - aero.drag(h, v)) / m - g * np.sin(gamma),
                g * (u[0] - np.cos(gamma)) / v,
            ]
        )

    return OcpDefinition(
        n_x=3,
        n_u=1,
        dynamics=dynamics,
        mayer=_minimum_time,
        initial_state=[0.0, 0.12931, 0.0],
        final_state=[19.995, 0.29509, 0.0],
        state_lower=[0.0, 0.01, 0.0],
        state_upper=[30.0, 1.0, np.pi / 2],
        control_lower=[aero.load_factor_bounds[0]],
        control_upper=[aero.load_factor_bounds[1]],
        t0=TimeSpec.fixed(0.0),
        tf=TimeSpec.free(*TF_BOUNDS, guess=CLIMB_TF_GUESS),
        name="supersonic_climb",
        state_names=["h", "v", "gamma"],
        control_names=["n"],
    )


def demo_aero_model() -> AeroModel:
    """
    Smooth stand-in aero model in km, km/s and unit mass.

    Thrust decays and drag follows an exponential atmosphere with altitude.
    It only makes the climb problem runnable; it is not tabulated aircraft
    data, so the minimum climb time differs from published values.
    """

    def thrust(h, v):
        return 0.006 * np.exp(-np.asarray(h) / 20.0) * (1.0 + 0.5 * np.asarray(v))

    def drag(h, v):
        return 0.034 * np.exp(-np.asarray(h) / 7.0) * np.asarray(v) ** 2

    return AeroModel(thrust=thrust, drag=drag, mass=1.0, gravity=0.00981)


BENCHMARKS = {
    "robot_arm": robot_arm,
    "hyper_sensitive": hyper_sensitive,
    "supersonic_climb": supersonic_climb,
}
