//! Symmetric FastICA with a tanh contrast, and correlation-based removal of
//! ocular components.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::rng::{self, domain};
use crate::signal_model::Recording;

use super::DspError;

const MAX_ITER: usize = 200;
const TOL: f64 = 1e-6;

/// Frontal channels screened for ocular components.
pub const DEFAULT_FRONTAL: [&str; 4] = ["AF7", "AF8", "Fp1", "Fp2"];

#[derive(Debug, Clone)]
pub struct IcaDecomposition {
    /// `n_comp × n_ch`, maps centered channels to sources.
    pub unmixing: DMatrix<f64>,
    /// `n_ch × n_comp`, maps sources back to channels.
    pub mixing: DMatrix<f64>,
    /// `n_comp × n_samples`, unit variance rows.
    pub sources: DMatrix<f64>,
    /// `n_comp × n_ch`.
    pub whitener: DMatrix<f64>,
    /// Per-channel mean removed before whitening.
    pub mean: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn to_matrix(rec: &Recording) -> DMatrix<f64> {
    DMatrix::from_row_slice(rec.n_channels(), rec.n_samples(), rec.data())
}

/// `(W Wᵀ)^{-1/2} W`.
fn sym_decorrelate(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let d = eig.eigenvalues.map(|v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose() * w
}

/// Whitening by covariance eigendecomposition (top `n_comp`), then
/// symmetric fixed-point iterations until `max |1 − |⟨w_new, w_old⟩|| < 1e-6`
/// or 200 iterations. A non-converged run returns its best iterate with
/// `converged = false`.
pub fn fast_ica(rec: &Recording, n_comp: usize, seed: u64) -> Result<IcaDecomposition, DspError> {
    let nch = rec.n_channels();
    let n = rec.n_samples();
    if n_comp == 0 || n_comp > nch {
        return Err(DspError::InvalidParameter(format!("{n_comp} components for {nch} channels")));
    }
    if n < 2 {
        return Err(DspError::InvalidParameter("need at least two samples".into()));
    }
    let mut x = to_matrix(rec);
    let mean: Vec<f64> = (0..nch).map(|c| x.row(c).sum() / n as f64).collect();
    for c in 0..nch {
        x.row_mut(c).add_scalar_mut(-mean[c]);
    }

    let cov = (&x * x.transpose()) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..nch).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > 1e-10 * top.max(0.0)).count();
    if top <= 0.0 || rank < n_comp {
        return Err(DspError::RankDeficient { rank: if top <= 0.0 { 0 } else { rank }, requested: n_comp });
    }
    let mut whitener = DMatrix::zeros(n_comp, nch);
    let mut dewhitener = DMatrix::zeros(nch, n_comp);
    for (k, &i) in order.iter().take(n_comp).enumerate() {
        let l = eig.eigenvalues[i];
        let v = eig.eigenvectors.column(i);
        // sign convention: largest-magnitude entry positive
        let pivot = v.iter().copied().fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });
        let s = if pivot < 0.0 { -1.0 } else { 1.0 };
        for c in 0..nch {
            whitener[(k, c)] = s * v[c] / l.sqrt();
            dewhitener[(c, k)] = s * v[c] * l.sqrt();
        }
    }
    let z = &whitener * &x;

    let mut rng = rng::stream(seed, domain::ICA, 0);
    let init = DMatrix::from_fn(n_comp, n_comp, |_, _| StandardNormal.sample(&mut rng));
    let mut w = sym_decorrelate(&init);
    let mut best = (f64::INFINITY, w.clone());
    let mut converged = false;
    let mut iterations = 0;
    let zt = z.transpose();
    for it in 1..=MAX_ITER {
        iterations = it;
        let g = (&w * &z).map(f64::tanh);
        let gp_mean: Vec<f64> = (0..n_comp).map(|i| g.row(i).iter().map(|v| 1.0 - v * v).sum::<f64>() / n as f64).collect();
        let mut w_new = (&g * &zt) / n as f64;
        for i in 0..n_comp {
            for j in 0..n_comp {
                w_new[(i, j)] -= gp_mean[i] * w[(i, j)];
            }
        }
        let w_new = sym_decorrelate(&w_new);
        let inner = &w_new * w.transpose();
        let lim = (0..n_comp).map(|i| (1.0 - inner[(i, i)].abs()).abs()).fold(0.0, f64::max);
        w = w_new;
        if lim < best.0 {
            best = (lim, w.clone());
        }
        if lim < TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        w = best.1;
    }
    let unmixing = &w * &whitener;
    let mixing = &dewhitener * w.transpose();
    let sources = &w * &z;
    Ok(IcaDecomposition { unmixing, mixing, sources, whitener, mean, converged, iterations })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Projects a recording through the decomposition keeping only `keep[k]` components.
pub fn reconstruct(ica: &IcaDecomposition, rec: &Recording, keep: &[bool]) -> Result<Recording, DspError> {
    let nch = rec.n_channels();
    if ica.mixing.nrows() != nch || keep.len() != ica.mixing.ncols() {
        return Err(DspError::InvalidParameter("decomposition does not match recording".into()));
    }
    let mut x = to_matrix(rec);
    for c in 0..nch {
        x.row_mut(c).add_scalar_mut(-ica.mean[c]);
    }
    let mut s = &ica.unmixing * &x;
    for (k, &kept) in keep.iter().enumerate() {
        if !kept {
            s.row_mut(k).fill(0.0);
        }
    }
    let mut y = &ica.mixing * s;
    for c in 0..nch {
        y.row_mut(c).add_scalar_mut(ica.mean[c]);
    }
    let mut data = Vec::with_capacity(nch * rec.n_samples());
    for c in 0..nch {
        data.extend(y.row(c).iter());
    }
    Ok(rec.with_data(data)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EogReport {
    pub removed: Vec<usize>,
    /// Largest |r| of each component against the frontal channels.
    pub max_abs_r: Vec<f64>,
}

/// Zeroes every component whose time course correlates with any frontal
/// channel at `|r| ≥ r_thresh`, then reconstructs.
pub fn reject_eog(
    ica: &IcaDecomposition,
    rec: &Recording,
    frontal: &[&str],
    r_thresh: f64,
) -> Result<(Recording, EogReport), DspError> {
    let frontal_rows: Vec<&[f64]> = frontal
        .iter()
        .map(|name| rec.channel_by_name(name).ok_or_else(|| DspError::UnknownChannel(name.to_string())))
        .collect::<Result<_, _>>()?;
    let n_comp = ica.mixing.ncols();
    let mut x = to_matrix(rec);
    for c in 0..rec.n_channels() {
        x.row_mut(c).add_scalar_mut(-ica.mean[c]);
    }
    let sources = &ica.unmixing * &x;
    let mut keep = vec![true; n_comp];
    let mut max_abs_r = Vec::with_capacity(n_comp);
    for (k, kept) in keep.iter_mut().enumerate() {
        let src: Vec<f64> = sources.row(k).iter().copied().collect();
        let r = frontal_rows.iter().map(|ch| pearson(&src, ch).abs()).fold(0.0, f64::max);
        max_abs_r.push(r);
        if r >= r_thresh {
            *kept = false;
        }
    }
    let removed = (0..n_comp).filter(|&k| !keep[k]).collect();
    Ok((reconstruct(ica, rec, &keep)?, EogReport { removed, max_abs_r }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mixed(sources: &[Vec<f64>], n_ch: usize, seed: u64) -> (Recording, DMatrix<f64>) {
        let mut rng = rng::stream(seed, 77, 0);
        let a = DMatrix::from_fn(n_ch, sources.len(), |_, _| rng.random_range(-1.0..1.0));
        let n = sources[0].len();
        let mut data = vec![0.0; n_ch * n];
        for c in 0..n_ch {
            for (k, s) in sources.iter().enumerate() {
                for t in 0..n {
                    data[c * n + t] += a[(c, k)] * s[t];
                }
            }
        }
        let names = crate::montage::STANDARD_64[..n_ch].iter().map(|s| s.to_string()).collect();
        (Recording::new(names, 512, data).unwrap(), a)
    }

    fn three_sources(n: usize) -> Vec<Vec<f64>> {
        let mut rng = rng::stream(5, 78, 0);
        vec![
            (0..n).map(|t| ((t as f64 / 37.0) % 1.0) * 2.0 - 1.0).collect(),
            (0..n).map(|t| if (t / 23) % 2 == 0 { 1.0 } else { -1.0 }).collect(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        ]
    }

    #[test]
    fn whitened_covariance_is_identity() {
        let (rec, _) = mixed(&three_sources(4000), 6, 1);
        let ica = fast_ica(&rec, 3, 0).unwrap();
        let mut x = to_matrix(&rec);
        for c in 0..6 {
            x.row_mut(c).add_scalar_mut(-ica.mean[c]);
        }
        let z = &ica.whitener * x;
        let cov = &z * z.transpose() / 4000.0;
        assert!((cov - DMatrix::identity(3, 3)).amax() < 1e-8);
        let s = &ica.sources;
        let scov = s * s.transpose() / 4000.0;
        assert!((scov - DMatrix::identity(3, 3)).amax() < 1e-8);
        assert!((&ica.unmixing * &ica.mixing - DMatrix::identity(3, 3)).amax() < 1e-6);
    }

    #[test]
    fn single_source_recovered() {
        let src = three_sources(3000).swap_remove(0);
        let (rec, _) = mixed(&[src.clone()], 4, 2);
        let ica = fast_ica(&rec, 1, 3).unwrap();
        let r = pearson(&ica.sources.row(0).iter().copied().collect::<Vec<_>>(), &src);
        assert!(r.abs() > 0.99);
    }

    #[test]
    fn rank_deficiency_detected() {
        let src = three_sources(1000).swap_remove(1);
        let (rec, _) = mixed(&[src], 4, 2);
        assert!(matches!(fast_ica(&rec, 2, 0), Err(DspError::RankDeficient { rank: 1, requested: 2 })));
        assert!(fast_ica(&rec, 5, 0).is_err());
    }

    #[test]
    fn deterministic_from_seed() {
        let (rec, _) = mixed(&three_sources(2000), 5, 4);
        let a = fast_ica(&rec, 3, 11).unwrap();
        let b = fast_ica(&rec, 3, 11).unwrap();
        assert_eq!(a.unmixing, b.unmixing);
    }

    #[test]
    fn full_reconstruction_and_full_removal() {
        let (rec, _) = mixed(&three_sources(2000), 3, 6);
        let ica = fast_ica(&rec, 3, 1).unwrap();
        let same = reconstruct(&ica, &rec, &[true; 3]).unwrap();
        let err = rec.data().iter().zip(same.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6);
        let none = reconstruct(&ica, &rec, &[false; 3]).unwrap();
        for c in 0..3 {
            assert!(none.channel(c).iter().all(|v| (v - ica.mean[c]).abs() < 1e-12));
        }
    }
}
