//! Long-short distance aggregation networks (LSDAN) for positive-unlabeled
//! transductive node classification.

pub mod tensor;
pub mod graph;
pub mod model;
pub mod purisk;
pub mod data;
pub mod train;
pub mod cli;
