//! Device-to-device translation by second-order statistics alignment.
//!
//! An operator is fitted from unlabeled, unpaired windows of a source device
//! and of the model's training device. Statistics are pooled over every time
//! sample of every window, treating each sample as a `C`-vector. In diagonal
//! mode each channel is shifted and scaled so its mean and variance match the
//! target; in full mode the source covariance is whitened and re-colored with
//! the target covariance (`A = S_t^{1/2} S_s^{-1/2}`).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DeviceId, SensorWindow, TranslationKey};

/// Default floor on fitting windows per side.
pub const DEFAULT_MIN_SAMPLES: usize = 100;

/// Relative ridge added to covariances before factorization.
pub const RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMode {
    Diagonal,
    Full,
}

impl core::str::FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" => Ok(Self::Diagonal),
            "full" => Ok(Self::Full),
            other => Err(Error::InvalidConfig(format!("unknown alignment mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub min_samples: usize,
    /// Add `RIDGE * trace / C` to each covariance. Without it a singular
    /// source covariance is an error.
    pub regularize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { min_samples: DEFAULT_MIN_SAMPLES, regularize: true }
    }
}

/// Mean and covariance of time-pooled channel vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: Vec<f64>,
    /// `C x C`, row-major, population normalization.
    pub cov: Vec<f64>,
}

impl Moments {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self, c: usize) -> f64 {
        self.cov[c * self.channels() + c]
    }
}

/// Pools every time sample of every window into one set of `C`-vectors.
pub fn pooled_moments(windows: &[SensorWindow]) -> Result<Moments> {
    let first = windows.first().ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
    let c = first.channels;
    let mut mean = vec![0.0; c];
    let mut count = 0usize;
    for w in windows {
        if w.channels != c {
            return Err(Error::ChannelMismatch { expected: c, got: w.channels });
        }
        let len = w.len();
        for (ch, m) in mean.iter_mut().enumerate() {
            *m += w.channel(ch).iter().sum::<f64>();
        }
        count += len;
    }
    if count == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);

    let mut cov = vec![0.0; c * c];
    let mut centered = vec![0.0; c];
    for w in windows {
        for l in 0..w.len() {
            for (ch, x) in centered.iter_mut().enumerate() {
                *x = w.samples[ch * w.len() + l] - mean[ch];
            }
            for i in 0..c {
                for j in i..c {
                    cov[i * c + j] += centered[i] * centered[j];
                }
            }
        }
    }
    for i in 0..c {
        for j in i..c {
            let v = cov[i * c + j] / count as f64;
            cov[i * c + j] = v;
            cov[j * c + i] = v;
        }
    }
    Ok(Moments { count, mean, cov })
}

/// Maps windows of `source` onto the distribution of `target`:
/// `x' = linear * x + offset` applied to every time sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationOperator {
    pub source: DeviceId,
    pub target: DeviceId,
    pub mode: AlignmentMode,
    pub channels: usize,
    pub mean_src: Vec<f64>,
    pub cov_src: Vec<f64>,
    pub mean_tgt: Vec<f64>,
    pub cov_tgt: Vec<f64>,
    /// `C x C`, row-major. Diagonal in diagonal mode.
    pub linear: Vec<f64>,
    pub offset: Vec<f64>,
}

impl TranslationOperator {
    /// Exact pass-through for `device`.
    pub fn identity(device: DeviceId, channels: usize) -> Self {
        let eye = identity_matrix(channels);
        Self {
            source: device,
            target: device,
            mode: AlignmentMode::Diagonal,
            channels,
            mean_src: vec![0.0; channels],
            cov_src: eye.clone(),
            mean_tgt: vec![0.0; channels],
            cov_tgt: eye.clone(),
            linear: eye,
            offset: vec![0.0; channels],
        }
    }

    /// Hand-specified per-channel affine map.
    pub fn diagonal(source: DeviceId, target: DeviceId, scale: &[f64], shift: &[f64]) -> Result<Self> {
        let c = scale.len();
        if shift.len() != c {
            return Err(Error::ChannelMismatch { expected: c, got: shift.len() });
        }
        let mut linear = vec![0.0; c * c];
        for (i, s) in scale.iter().enumerate() {
            linear[i * c + i] = *s;
        }
        let mut op = Self::identity(source, c);
        op.target = target;
        op.linear = linear;
        op.offset = shift.to_vec();
        Ok(op)
    }

    pub fn key(&self) -> TranslationKey {
        TranslationKey { source: self.source, target: self.target }
    }

    pub fn is_identity(&self) -> bool {
        self.offset.iter().all(|&b| b == 0.0)
            && (0..self.channels).all(|i| (0..self.channels).all(|j| self.linear[i * self.channels + j] == if i == j { 1.0 } else { 0.0 }))
    }

    /// Per-channel scale (the diagonal of the linear part).
    pub fn scale(&self) -> Vec<f64> {
        (0..self.channels).map(|i| self.linear[i * self.channels + i]).collect()
    }

    pub fn shift(&self) -> &[f64] {
        &self.offset
    }

    /// Structural checks for operators read back from storage.
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 {
            return Err(Error::ZeroChannels);
        }
        let sizes = [
            ("mean_src", self.mean_src.len(), c),
            ("mean_tgt", self.mean_tgt.len(), c),
            ("offset", self.offset.len(), c),
            ("cov_src", self.cov_src.len(), c * c),
            ("cov_tgt", self.cov_tgt.len(), c * c),
            ("linear", self.linear.len(), c * c),
        ];
        for (name, got, want) in sizes {
            if got != want {
                return Err(Error::DimensionMismatch(format!("{name} has {got} entries, expected {want}")));
            }
        }
        let all = [&self.mean_src, &self.mean_tgt, &self.offset, &self.cov_src, &self.cov_tgt, &self.linear];
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite(String::from("operator parameters")));
        }
        for cov in [&self.cov_src, &self.cov_tgt] {
            for i in 0..c {
                if cov[i * c + i] < 0.0 {
                    return Err(Error::InvalidConfig(String::from("covariance has a negative diagonal entry")));
                }
                for j in 0..i {
                    if cov[i * c + j] != cov[j * c + i] {
                        return Err(Error::InvalidConfig(String::from("covariance is not symmetric")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Translates one window; only sample values change.
    pub fn apply(&self, w: &SensorWindow) -> Result<SensorWindow> {
        if w.device != self.source {
            return Err(Error::DeviceMismatch { expected: self.source, got: w.device });
        }
        if w.channels != self.channels {
            return Err(Error::ChannelMismatch { expected: self.channels, got: w.channels });
        }
        if self.is_identity() {
            return Ok(w.clone());
        }
        let c = self.channels;
        let len = w.len();
        let mut out = vec![0.0; w.samples.len()];
        match self.mode {
            AlignmentMode::Diagonal => {
                for ch in 0..c {
                    let (s, b) = (self.linear[ch * c + ch], self.offset[ch]);
                    for (o, x) in out[ch * len..(ch + 1) * len].iter_mut().zip(w.channel(ch)) {
                        *o = s * x + b;
                    }
                }
            }
            AlignmentMode::Full => {
                for l in 0..len {
                    for i in 0..c {
                        let mut acc = self.offset[i];
                        for j in 0..c {
                            acc += self.linear[i * c + j] * w.samples[j * len + l];
                        }
                        out[i * len + l] = acc;
                    }
                }
            }
        }
        Ok(w.with_samples(out))
    }
}

/// Free-function form of [`TranslationOperator::apply`].
pub fn apply(op: &TranslationOperator, w: &SensorWindow) -> Result<SensorWindow> {
    op.apply(w)
}

fn identity_matrix(c: usize) -> Vec<f64> {
    let mut m = vec![0.0; c * c];
    for i in 0..c {
        m[i * c + i] = 1.0;
    }
    m
}

fn single_device(windows: &[SensorWindow]) -> Result<DeviceId> {
    let d = windows[0].device;
    match windows.iter().find(|w| w.device != d) {
        Some(w) => Err(Error::DeviceMismatch { expected: d, got: w.device }),
        None => Ok(d),
    }
}

fn ridge(cov: &[f64], c: usize) -> f64 {
    let tr: f64 = (0..c).map(|i| cov[i * c + i]).sum();
    let lambda = RIDGE * tr / c as f64;
    if lambda > 0.0 {
        lambda
    } else {
        RIDGE
    }
}

/// Fits an operator mapping the distribution of `src` onto that of `tgt`.
/// Labels never enter: only unlabeled windows are accepted.
pub fn fit_alignment(src: &[SensorWindow], tgt: &[SensorWindow], mode: AlignmentMode, opts: &FitOptions) -> Result<TranslationOperator> {
    let needed = opts.min_samples.max(1);
    for side in [src, tgt] {
        if side.len() < needed {
            return Err(Error::InsufficientSamples { needed, got: side.len() });
        }
    }
    let c = src[0].channels;
    if tgt[0].channels != c {
        return Err(Error::ChannelMismatch { expected: tgt[0].channels, got: c });
    }
    let source = single_device(src)?;
    let target = single_device(tgt)?;
    let ms = pooled_moments(src)?;
    let mt = pooled_moments(tgt)?;
    if source == target {
        let mut op = TranslationOperator::identity(source, c);
        op.mean_src = ms.mean;
        op.cov_src = ms.cov;
        op.mean_tgt = mt.mean;
        op.cov_tgt = mt.cov;
        return Ok(op);
    }

    let linear = match mode {
        AlignmentMode::Diagonal => {
            let lambda = ridge(&ms.cov, c);
            let mut lin = vec![0.0; c * c];
            for ch in 0..c {
                let mut vs = ms.variance(ch);
                if vs <= 0.0 {
                    if !opts.regularize {
                        return Err(Error::SingularCovariance(format!("source channel {ch} has zero variance")));
                    }
                    vs = lambda;
                }
                lin[ch * c + ch] = libm::sqrt(mt.variance(ch).max(0.0) / vs);
            }
            lin
        }
        AlignmentMode::Full => {
            let (mut s, mut t) = (DMatrix::from_row_slice(c, c, &ms.cov), DMatrix::from_row_slice(c, c, &mt.cov));
            if opts.regularize {
                s += DMatrix::identity(c, c) * ridge(&ms.cov, c);
                t += DMatrix::identity(c, c) * ridge(&mt.cov, c);
            }
            let s_inv_sqrt =
                spd_power(&s, -0.5).ok_or_else(|| Error::SingularCovariance(String::from("source covariance is not positive definite")))?;
            let t_sqrt = psd_sqrt(&t);
            let a = t_sqrt * s_inv_sqrt;
            row_major(&a)
        }
    };
    let mut offset = mt.mean.clone();
    for i in 0..c {
        for j in 0..c {
            offset[i] -= linear[i * c + j] * ms.mean[j];
        }
    }
    Ok(TranslationOperator {
        source,
        target,
        mode,
        channels: c,
        mean_src: ms.mean,
        cov_src: ms.cov,
        mean_tgt: mt.mean,
        cov_tgt: mt.cov,
        linear,
        offset,
    })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `m^p` for a symmetric positive definite matrix; `None` when an
/// eigenvalue is not clearly positive.
fn spd_power(m: &DMatrix<f64>, p: f64) -> Option<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    if eig.eigenvalues.iter().any(|&l| !(l > 1e-12 * max.max(1e-300))) {
        return None;
    }
    let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| libm::pow(l, p)));
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Principal square root of a symmetric PSD matrix; negative rounding noise
/// in the spectrum is clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| libm::sqrt(l.max(0.0))));
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Fréchet distance between the Gaussians `N(mean_a, cov_a)` and
/// `N(mean_b, cov_b)`:
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2})`.
pub fn frechet_gaussian(mean_a: &[f64], cov_a: &[f64], mean_b: &[f64], cov_b: &[f64]) -> f64 {
    let c = mean_a.len();
    let mean_term: f64 = mean_a.iter().zip(mean_b).map(|(a, b)| (a - b) * (a - b)).sum();
    let sa = DMatrix::from_row_slice(c, c, cov_a);
    let sb = DMatrix::from_row_slice(c, c, cov_b);
    let root_a = psd_sqrt(&sa);
    let cross = psd_sqrt(&symmetrize(&(&root_a * &sb * &root_a)));
    let trace_term = sa.trace() + sb.trace() - 2.0 * cross.trace();
    (mean_term + trace_term).max(0.0)
}

/// Gaussian-approximation Fréchet distance between two window sets.
pub fn alignment_distance(a: &[SensorWindow], b: &[SensorWindow]) -> Result<f64> {
    let ma = pooled_moments(a)?;
    let mb = pooled_moments(b)?;
    for m in [&ma, &mb] {
        if m.count < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: m.count });
        }
    }
    if ma.channels() != mb.channels() {
        return Err(Error::ChannelMismatch { expected: ma.channels(), got: mb.channels() });
    }
    Ok(frechet_gaussian(&ma.mean, &ma.cov, &mb.mean, &mb.cov))
}

/// Distance to the target before and after translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDiagnostics {
    pub pre_distance: f64,
    pub post_distance: f64,
}

pub fn diagnose(op: &TranslationOperator, src: &[SensorWindow], tgt: &[SensorWindow]) -> Result<AlignmentDiagnostics> {
    let translated = src.iter().map(|w| op.apply(w)).collect::<Result<Vec<_>>>()?;
    Ok(AlignmentDiagnostics { pre_distance: alignment_distance(src, tgt)?, post_distance: alignment_distance(&translated, tgt)? })
}
