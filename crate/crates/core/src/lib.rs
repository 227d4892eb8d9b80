//! Stabilized Lagrange finite elements for steady advection-diffusion.
//!
//! Besides closed-form stabilization coefficients, τ can be calibrated so
//! that the coarse solution best matches a fine reference in `L²`, stored
//! as a dimensionless φ in a Péclet-indexed [`phi_table::PhiTable`] and
//! reused on new meshes.
//!
//! ```
//! use stabfem::assembly::StabilizationMethod;
//! use stabfem::calibration::{calibrate, CalibrationProblem, TrainingConfig};
//!
//! let cp = CalibrationProblem::training(1, &[4.0], StabilizationMethod::TermByTerm, &TrainingConfig::default())?;
//! let r = calibrate(&cp)?;
//! let exact = (4.0 / 4f64.tanh() - 1.0) / 8.0;
//! assert!((r.phi - exact).abs() < 1e-8);
//! # Ok::<(), stabfem::Error>(())
//! ```
//!
//! Modules follow the pipeline: [`mesh`], [`fe_space`], [`assembly`],
//! [`linear_solver`], [`tau`], [`calibration`], [`phi_table`] and
//! [`benchmarks`].

pub mod assembly;
pub mod benchmarks;
pub mod calibration;
pub mod error;
pub mod fe_space;
pub mod linear_solver;
pub mod mesh;
pub mod phi_table;
pub mod tau;

pub use error::{Error, Result};
