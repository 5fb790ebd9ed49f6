//! Entanglement renormalization for quadratic fermion lattice models.
//!
//! Everything is carried out in the language of Majorana correlation
//! matrices: a Gaussian state of `M` spinless modes is a real antisymmetric
//! `2M x 2M` matrix `Γ` with `<c_a c_b> = δ_ab + i Γ_ab`, where mode `r`
//! owns Majorana indices `2r` and `2r + 1` (zero based).
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`] - small dense kernels (Jacobi eigensolver, polar projection
//!   onto `SO(n)`, Pfaffians, random rotations).
//! * [`gaussian`] - canonical block form of correlation matrices, mode
//!   spectra, entropies and pure-mode projection.
//! * [`many_body`] - dense `2^L` Fock-space oracle used for verification.
//! * [`model`] - the nearest-neighbour hopping/pairing/chemical-potential
//!   Hamiltonian on periodic 1D chains and 2D square lattices, and its exact
//!   ground state.
//! * [`lattice`] - translation-invariant storage of lattice correlation
//!   matrices (one `2P x 2P` block per site displacement).
//! * [`geometry`] - blocks, disentangler placements and optimisation windows.
//! * [`optimizer`] - disentangler/isometry optimisation for one layer.
//! * [`rg`] - the RG flow, MERA layer stack, reports and reconstruction.

pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod lattice;
pub mod linalg;
pub mod many_body;
pub mod model;
pub mod optimizer;
pub mod par;
pub mod rg;

pub use error::{Error, Result};
pub use gaussian::{
    block_diagonalize, block_entropy, extract_submatrix, project_out_pure, MajoranaCorrelation,
    ModeSpectrum,
};
pub use geometry::{build_geometry, window_indices, BlockGeometry, Placement};
pub use lattice::{LatticeCorrelation, Site};
pub use many_body::{many_body_oracle, OracleSpectrum};
pub use model::{
    dispersion, energy_density, exact_gs_energy_density, ground_state, ground_state_correlation,
    majorana_coefficients, GroundState, HamiltonianMajorana, ModelSpec, ZeroModePolicy,
};
pub use optimizer::{
    coarse_grain_window, optimal_isometry_given_disentanglers, optimize_layer, purity_cost,
    removed_mode_correlation, Disentangler, Isometry, OptimizationTrace, OptimizerOptions,
    UUpdate, WindowLayout,
};
pub use rg::{
    entropy_scan, fixed_point_distance, reconstruct_correlators, rg_flow, rg_step, Correlator,
    FlowOptions, MeraLayer, RGReport, RGTrajectory,
};
