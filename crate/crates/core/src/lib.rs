// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus_io;
pub mod engine;
pub mod infer;
pub mod model;
pub mod scene;
pub mod train;
pub mod triad;
