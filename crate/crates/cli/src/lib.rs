//! Instance and solution documents, seeded generators and the benchmark
//! suite behind the `epas` tool.

pub mod bench;
pub mod document;
pub mod generate;
