//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! Every value is a row-major `f64` matrix ([`Tensor`]); vectors are `1 x n`
//! rows and scalars are `1 x 1`. Operations are recorded on a [`Tape`] as
//! they execute and [`Tape::backward`] replays them in reverse to produce
//! [`Gradients`] for every leaf created with [`Tape::param`].
//!
//! ```
//! use autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let theta = tape.param(Tensor::row(vec![1.0, 2.0, 3.0]));
//! let loss = tape.sum(theta).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(theta).unwrap().data(), &[1.0, 1.0, 1.0]);
//! ```
//!
//! The operator set is deliberately narrow: it covers what the relation
//! model needs and nothing else. There is no broadcasting beyond bias rows,
//! scalar offsets and outer sums.

mod error;
mod groups;
mod tape;
mod tensor;

pub use error::AutodiffError;
pub use groups::RowGroups;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
