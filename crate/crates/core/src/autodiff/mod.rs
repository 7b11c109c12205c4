//! Reverse-mode automatic differentiation over dense row-major arrays.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and enough information to push adjoints back to its inputs. Graphs are
//! built fresh for every forward pass and dropped after `backward`.
//! Values are generic over [`Real`]; training runs in `f32`, gradient checks
//! in `f64`.

mod gradcheck;
mod graph;
mod lstm;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport, REL_FLOOR};
pub use graph::{Graph, Var};
pub use tensor::{Real, Tensor};
