pub mod embedding;
pub mod evaluation;
pub mod extraction;
pub mod linking;
pub mod ontology;
pub mod pipeline;
pub mod postprocess;
pub mod retrieval;
pub mod throttle;
