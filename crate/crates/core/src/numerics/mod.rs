//! Dense matrices, reverse-mode differentiation and seeded randomness.

pub mod gradcheck;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_many, FdReport};
pub use rng::Rng;
pub use tape::{OpKind, Tape, TapeNode, Var};
pub use tensor::{Tensor, NORM_FLOOR};
