//! Reverse-mode differentiation over dense tensors.

pub mod adam;
pub mod conv;
pub mod gdn;
pub mod graph;
pub mod param;

pub use adam::Adam;
pub use conv::Direction;
pub use graph::{Graph, Var};
pub use param::{ParamId, ParamStore, Parameter, Reparam};
