//! Smart-contract vulnerability auditing with a three-role language-model
//! workflow (detector, reasoner, verificator), retrieval over ERC reference
//! documentation, dataset tooling, and evaluation reports.

pub mod corpus;
pub mod dataset;
pub mod evaluation;
pub mod gateway;
pub mod label;
pub mod pipeline;
pub mod preprocess;

pub use label::Label;
