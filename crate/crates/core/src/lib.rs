//! Simulated nurse-patient symptom-monitoring dialogues and an extractive
//! dialogue-comprehension model.
//!
//! The crate has two halves. The data side builds annotated multi-turn
//! dialogues from linguistically characterized templates: [`bank`] parses and
//! instantiates the template bank, [`sim`] runs the agenda-driven dialogue
//! generator, and [`corpus`] holds the canonical sample types and their
//! line-delimited serialization. The model side answers (symptom, attribute)
//! queries with token spans or no-answer: [`text`] tokenizes and encodes
//! samples, [`nn`] is a small reverse-mode tensor core, [`model`] is the
//! bi-directional attention pointer network with an answerable classifier,
//! and [`train`] is the training loop, metrics, and experiment runner.

pub mod bank;
pub mod corpus;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod text;
pub mod train;

mod error;

pub use error::{Error, Result};
