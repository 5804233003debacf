//! Representational similarity analysis with simulated chat-model participants.
//!
//! Stimuli ([`corpus`]) are rated pairwise by personas ([`cohort`]) through a
//! chat backend ([`backend`]); replies are parsed ([`parse`]) into rating
//! matrices and dissimilarity matrices ([`dsm`]) that are compared with rank
//! statistics ([`stats`]), against embedding baselines ([`baseline`]), and
//! drawn ([`viz`]). [`pipeline`] ties the steps into runs and reports.

pub mod backend;
pub mod baseline;
pub mod cohort;
pub mod corpus;
pub mod dsm;
pub mod error;
pub mod parse;
pub mod pipeline;
pub mod stats;
pub mod viz;

pub use error::{Error, Result};
