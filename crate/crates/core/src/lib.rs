//! Numerical exterior calculus on `R^n` and extended phase space `R^n x R`:
//! alternating tensors, differential forms with finite-difference exterior
//! derivatives, flows, chains and quadrature, integral invariants, and the
//! kernel distributions of forms.

pub mod chain;
pub mod error;
pub mod exec;
pub mod expr;
pub mod field;
pub mod flow;
pub mod form;
pub mod geometry;
pub mod kernel;
pub mod quadrature;
pub mod runner;
pub mod scenario;
pub mod space;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use field::VectorField;
pub use form::DifferentialForm;
pub use space::{Domain, Space};
pub use tensor::{AltTensor, ExtendedPoint, Point, Vector};
