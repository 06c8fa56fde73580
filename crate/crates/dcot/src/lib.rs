//! Tag-structured chain-of-thought tooling.
//!
//! Modules:
//! - [`tagparse`]: streaming control-tag parser and segmenter
//! - [`decode`]: Locked/Dynamic temperature decode orchestration
//! - [`datagen`]: preference-pair dataset construction
//! - [`decontam`]: dual-criterion benchmark decontamination
//! - [`orpo`]: ORPO loss, gradients, and training manifest
//! - [`eval`]: multiple-choice evaluation and reporting
//! - [`config`]: pipeline configuration and run manifests

pub mod cli;
pub mod config;
pub mod datagen;
pub mod decode;
pub mod decontam;
pub mod embed;
pub mod eval;
pub mod orpo;
pub mod tagparse;
