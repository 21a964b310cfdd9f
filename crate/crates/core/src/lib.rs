pub mod corpus;
pub mod encoder;
pub mod evalkit;
pub mod exemplars;
pub mod grounding;
pub mod induce;
pub mod jsonl;
pub mod rulefile;
pub mod rules;
pub mod synth;
pub mod text;
pub mod train;
pub mod weak;
