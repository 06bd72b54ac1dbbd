//! Experiment harness around `finextract-core`.
//!
//! One TOML document declares an experiment: the base mixture, the
//! fine-tuning targets and caption, training recipes, guidance scales,
//! clustering and scoring setup. The harness turns that into artifact
//! directories: binary sample batches, CSV metric tables, SVG plots, and
//! a config echo sufficient to reproduce every byte of them. The library
//! half is what the `finextract` binary calls into, split so the
//! pipeline, sweeps, and the caption attack can be driven from tests.

pub mod ablate;
pub mod caption_cmd;
pub mod config;
pub mod pipeline;
pub mod plot;
pub mod report;
