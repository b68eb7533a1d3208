//! Steering-intention decoding from multichannel EEG.
//!
//! The crate covers the whole offline and online path:
//!
//! ```text
//! synth ──► Recording + triggers ──► epoching ──► balance (SMOTE) ──► convnet ──► metrics
//!                 │                                                     │
//!                 ├──► dsp (band-pass, CAR, ICA, Welch, evoked, topo)    │
//!                 └──► rtstream::serve ──► rtstream::classify_stream ◄───┘
//! ```
//!
//! Classifier input is raw (unfiltered) signal cut into two overlapping
//! windows per trigger, decimated to 500 × 64 and normalized per epoch.
//! The visualization path (`dsp`) is independent of the classifier path.

pub mod balance;
pub mod config;
pub mod convnet;
pub mod dsp;
pub mod epoching;
pub mod metrics;
pub mod montage;
pub mod pipeline;
pub mod rtstream;
pub mod signal_model;
pub mod synth;

mod rng;

pub use signal_model::{Class, Recording, TriggerEvent};
