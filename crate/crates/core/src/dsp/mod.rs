//! Visualization-path signal processing.
//!
//! None of this feeds the classifier: classifier epochs are cut from the raw
//! recording, while these transforms prepare evoked averages, spectra and
//! topographies.

mod filter;
mod ica;
mod spectral;
mod viz;

use thiserror::Error;

use crate::signal_model::{Recording, SignalError};

pub use filter::{bandpass, design_bandpass, filtfilt, magnitude, BandpassSpec, Biquad};
pub use ica::{fast_ica, reconstruct, reject_eog, EogReport, IcaDecomposition, DEFAULT_FRONTAL};
pub use spectral::{band_power, psd_csv, psd_svg, welch_psd, Psd, WelchParams};
pub use viz::{
    baseline_correct, evoked_average, evoked_csv, extract_viz_epochs, topo_csv, topo_export, topo_grid, topo_svg, Evoked,
    TopoMap, VizEpoch, VizEpochSet,
};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("band {lo}-{hi} Hz invalid for sample rate {fs} Hz")]
    NyquistViolation { lo: f64, hi: f64, fs: f64 },
    #[error("unstable filter section (pole radius {radius})")]
    UnstableFilter { radius: f64 },
    #[error("common-average reference needs at least two channels")]
    SingleChannel,
    #[error("epoch has {available} pre-trigger samples, baseline needs {needed}")]
    MissingPrestim { needed: usize, available: usize },
    #[error("covariance rank {rank} below requested {requested} components")]
    RankDeficient { rank: usize, requested: usize },
    #[error("signal of {len} samples shorter than segment length {segment}")]
    SignalTooShort { len: usize, segment: usize },
    #[error("band {lo}-{hi} Hz outside spectrum 0-{max} Hz")]
    BandOutOfRange { lo: f64, hi: f64, max: f64 },
    #[error("no epochs for class {0}")]
    EmptyClass(crate::signal_model::Class),
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("no 2-D coordinates for channel {0:?}")]
    MissingCoords(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Subtracts the instantaneous mean over channels from every channel.
pub fn car(rec: &Recording) -> Result<Recording, DspError> {
    let nch = rec.n_channels();
    if nch < 2 {
        return Err(DspError::SingleChannel);
    }
    let ns = rec.n_samples();
    let mut mean = vec![0.0; ns];
    for c in 0..nch {
        for (m, v) in mean.iter_mut().zip(rec.channel(c)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nch as f64);
    let mut out = Vec::with_capacity(nch * ns);
    for c in 0..nch {
        out.extend(rec.channel(c).iter().zip(&mean).map(|(v, m)| v - m));
    }
    Ok(rec.with_data(out)?)
}
