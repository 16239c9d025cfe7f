//! Distilling teacher-generated positive and negative summaries into small
//! abstractive dialogue summarizers, with sequence-level distillation and two
//! contrastive objectives, plus the evaluation harness around them.

pub mod config;
pub mod corpus;
pub mod evaluation;
pub mod model;
pub mod objectives;
pub mod synthetic;
pub mod teacher;
pub mod text;
pub mod trainer;
