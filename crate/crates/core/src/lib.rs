//! Variable selection and inference for logistic regression under model
//! uncertainty, plus a simulation harness for comparing methods on data
//! generated from empirical designs.

pub mod bma;
pub mod dgp;
pub mod glm;
pub mod harness;
pub mod ingest;
pub mod methods;
pub mod metrics;
pub mod numeric;
pub mod penalized;
pub mod scoring;
pub mod selection;
pub mod separation;
