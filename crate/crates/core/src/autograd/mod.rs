//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor).

pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod tape;

pub use ops::norm::{BnMode, BnState};
pub use optim::{Parameter, Sgd};
pub use tape::{BnStats, OpKind, OpRecord, Tape, Var};
