//! Command-line tools and HTTP service for page retrieval and multimodal
//! question answering over product manuals.

pub mod artifacts;
pub mod cli;
pub mod inference;
pub mod service;
