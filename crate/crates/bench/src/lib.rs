//! Fixtures shared by the kernel benchmarks.

use relfp_core::equilibrium::build_equilibrium;
use relfp_core::experiments::{stable_dt, standard_grid};
use relfp_core::functionals::LyapunovConfig;
use relfp_core::operators::{FluxScheme, Operators, TransportScheme};
use relfp_core::solver::{initial_relative, InitialCondition, SolverConfig, Splitting};
use relfp_core::{EquilibriumState, PotentialSpec};

pub struct Fixture {
    pub eq: EquilibriumState,
    pub ops: Operators,
    pub h: Vec<f64>,
    pub solver: SolverConfig,
}

/// Harmonic potential, c = 1, central transport at the stable time step.
pub fn fixture(nx: usize, np: usize, splitting: Splitting) -> Fixture {
    let v = PotentialSpec::Harmonic;
    let grid = standard_grid(&v, nx, np, 1.0).expect("grid");
    let eq = build_equilibrium(&grid, &v, 1.0).expect("equilibrium");
    let transport = TransportScheme::Central;
    let ops = Operators::new(&eq, FluxScheme::ChangCooper, transport);
    let dt = stable_dt(&ops, &eq, transport).expect("dt");
    let ic = InitialCondition::ShiftedMaxwellian {
        x0: 1.0,
        p_shift: 1.0,
    };
    let h = initial_relative(&ic, &eq).expect("initial condition");
    let solver = SolverConfig {
        dt,
        t_final: 1.0,
        splitting,
        transport,
        initial_condition: ic,
        ..Default::default()
    };
    Fixture { eq, ops, h, solver }
}

/// Values of the size used by the long runs, without certification.
pub fn lyapunov() -> LyapunovConfig {
    LyapunovConfig {
        delta: 0.01,
        gamma: 2.4,
        epsilon: 0.03,
        eta: 0.5,
    }
}
