//! Static linear elasticity on tetrahedral meshes: constant-strain elements,
//! symmetric CSR assembly, Jacobi-preconditioned conjugate gradient.

mod element;
mod loads;
mod material;
mod solve;
mod sparse;

pub use element::element_stiffness;
pub use loads::traction_load;
pub use material::{lame_params, MaterialModel};
pub use solve::{
    mean_tip_displacement, solve, solve_case, solve_on_mesh, timoshenko_tip_deflection,
    SimulationResult, SolverStats, CG_RTOL,
};
pub use sparse::{apply_dirichlet, apply_dirichlet_dofs, assemble, CsrMatrix, SparseSystem};
