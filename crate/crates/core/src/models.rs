//! Reference probability-emitting classifiers.
//!
//! Windows are reduced to `3C` features (per-channel mean, standard deviation
//! and mean absolute first difference). Two variants are provided: a
//! Gaussian class-conditional model with diagonal per-class covariance, and
//! multinomial logistic regression trained by full-batch gradient descent on
//! standardized features. Outside this module a classifier is a black box:
//! the only way to use one is [`Classifier::infer`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassPosterior, DeviceId, ModelId, SensorWindow};

pub const FEATURES_PER_CHANNEL: usize = 3;

/// How a window is reduced to a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub channels: usize,
}

impl FeatureSpec {
    pub fn len(&self) -> usize {
        self.channels * FEATURES_PER_CHANNEL
    }

    pub fn is_empty(&self) -> bool {
        self.channels == 0
    }

    /// `[mean_c, std_c, mad_c]` for each channel in order.
    pub fn extract(&self, w: &SensorWindow) -> Result<Vec<f64>> {
        if w.channels != self.channels {
            return Err(Error::ChannelMismatch { expected: self.channels, got: w.channels });
        }
        let len = w.len();
        if len < 2 {
            return Err(Error::DimensionMismatch(format!("window needs at least 2 samples per channel, has {len}")));
        }
        let mut out = Vec::with_capacity(self.len());
        for c in 0..self.channels {
            let xs = w.channel(c);
            let mean = xs.iter().sum::<f64>() / len as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / len as f64;
            let mad = xs.windows(2).map(|p| libm::fabs(p[1] - p[0])).sum::<f64>() / (len - 1) as f64;
            out.extend([mean, libm::sqrt(var), mad]);
        }
        if let Some(i) = out.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("feature {i}")));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Gaussian,
    Logistic,
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "logistic" => Ok(Self::Logistic),
            other => Err(Error::InvalidConfig(format!("unknown classifier variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priors {
    Empirical,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    /// Per-feature variance floor, relative to that feature's pooled variance.
    pub variance_floor: f64,
    pub priors: Priors,
    pub step: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { variance_floor: 1e-3, priors: Priors::Empirical, step: 0.1, iterations: 500, l2: 1e-4 }
    }
}

/// Labeled windows from exactly one device.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    classes: usize,
    device: DeviceId,
    windows: Vec<SensorWindow>,
    labels: Vec<usize>,
}

impl TrainingSet {
    pub fn new(classes: usize, windows: Vec<SensorWindow>, labels: Vec<usize>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidConfig(format!("classes = {classes}, need at least 2")));
        }
        if windows.len() != labels.len() {
            return Err(Error::LengthMismatch { trace: windows.len(), labels: labels.len() });
        }
        let device = windows.first().ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?.device;
        if let Some(w) = windows.iter().find(|w| w.device != device) {
            return Err(Error::DeviceMismatch { expected: device, got: w.device });
        }
        let mut seen = vec![false; classes];
        for &l in &labels {
            *seen.get_mut(l).ok_or(Error::LabelOutOfRange { label: l, classes })? = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::MissingClass(k));
        }
        Ok(Self { classes, device, windows, labels })
    }

    pub fn device(&self) -> DeviceId {
        self.device
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn windows(&self) -> &[SensorWindow] {
        &self.windows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
enum Params {
    Gaussian {
        /// `K x F` row-major.
        means: Vec<f64>,
        variances: Vec<f64>,
        log_priors: Vec<f64>,
    },
    Logistic {
        feature_mean: Vec<f64>,
        feature_scale: Vec<f64>,
        /// `K x F` row-major.
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
}

/// A trained, immutable classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    id: ModelId,
    training_device: DeviceId,
    classes: usize,
    feature_spec: FeatureSpec,
    params: Params,
}

impl Classifier {
    pub fn id(&self) -> ModelId {
        self.id
    }

    pub fn training_device(&self) -> DeviceId {
        self.training_device
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        self.feature_spec
    }

    pub fn variant(&self) -> Variant {
        match self.params {
            Params::Gaussian { .. } => Variant::Gaussian,
            Params::Logistic { .. } => Variant::Logistic,
        }
    }

    /// Same classifier under another id.
    pub fn with_id(mut self, id: ModelId) -> Self {
        self.id = id;
        self
    }

    pub fn infer(&self, w: &SensorWindow) -> Result<ClassPosterior> {
        let f = self.feature_spec.extract(w)?;
        self.posterior_from_features(&f)
    }

    pub(crate) fn posterior_from_features(&self, f: &[f64]) -> Result<ClassPosterior> {
        let k = self.classes;
        let nf = f.len();
        let mut logits = vec![0.0; k];
        match &self.params {
            Params::Gaussian { means, variances, log_priors } => {
                for (c, logit) in logits.iter_mut().enumerate() {
                    let mut acc = log_priors[c];
                    for j in 0..nf {
                        let v = variances[c * nf + j];
                        let d = f[j] - means[c * nf + j];
                        acc -= 0.5 * (libm::log(2.0 * PI * v) + d * d / v);
                    }
                    *logit = acc;
                }
            }
            Params::Logistic { feature_mean, feature_scale, weights, bias } => {
                let z: Vec<f64> = (0..nf).map(|j| (f[j] - feature_mean[j]) / feature_scale[j]).collect();
                for (c, logit) in logits.iter_mut().enumerate() {
                    *logit = bias[c] + (0..nf).map(|j| weights[c * nf + j] * z[j]).sum::<f64>();
                }
            }
        }
        ClassPosterior::new(softmax(&logits), self.id)
    }

    /// Shape and finiteness checks for classifiers read back from storage.
    pub fn validate(&self) -> Result<()> {
        let k = self.classes;
        let nf = self.feature_spec.len();
        if k < 2 {
            return Err(Error::InvalidConfig(format!("classes = {k}, need at least 2")));
        }
        if nf == 0 {
            return Err(Error::ZeroChannels);
        }
        let check = |name: &str, v: &[f64], n: usize| -> Result<()> {
            if v.len() != n {
                return Err(Error::DimensionMismatch(format!("{name} has {} entries, expected {n}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(String::from(name)));
            }
            Ok(())
        };
        match &self.params {
            Params::Gaussian { means, variances, log_priors } => {
                check("means", means, k * nf)?;
                check("variances", variances, k * nf)?;
                check("log_priors", log_priors, k)?;
                if variances.iter().any(|v| *v <= 0.0) {
                    return Err(Error::InvalidConfig(String::from("variances must be positive")));
                }
            }
            Params::Logistic { feature_mean, feature_scale, weights, bias } => {
                check("feature_mean", feature_mean, nf)?;
                check("feature_scale", feature_scale, nf)?;
                check("weights", weights, k * nf)?;
                check("bias", bias, k)?;
                if feature_scale.iter().any(|v| *v <= 0.0) {
                    return Err(Error::InvalidConfig(String::from("feature scales must be positive")));
                }
            }
        }
        Ok(())
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Trains a classifier on one device's labeled windows.
pub fn fit_classifier(id: ModelId, data: &TrainingSet, variant: Variant, hyper: &Hyper) -> Result<Classifier> {
    let spec = FeatureSpec { channels: data.windows[0].channels };
    let features = data.windows.iter().map(|w| spec.extract(w)).collect::<Result<Vec<_>>>()?;
    let k = data.classes;
    let nf = spec.len();
    let n = features.len() as f64;

    let mut counts = vec![0usize; k];
    for &l in &data.labels {
        counts[l] += 1;
    }
    let (feature_mean, feature_var) = column_moments(&features, nf);

    let params = match variant {
        Variant::Gaussian => {
            let mut means = vec![0.0; k * nf];
            for (f, &l) in features.iter().zip(&data.labels) {
                for j in 0..nf {
                    means[l * nf + j] += f[j];
                }
            }
            for c in 0..k {
                for j in 0..nf {
                    means[c * nf + j] /= counts[c] as f64;
                }
            }
            let mut variances = vec![0.0; k * nf];
            for (f, &l) in features.iter().zip(&data.labels) {
                for j in 0..nf {
                    let d = f[j] - means[l * nf + j];
                    variances[l * nf + j] += d * d;
                }
            }
            for c in 0..k {
                for j in 0..nf {
                    let floor = hyper.variance_floor * feature_var[j] + 1e-12;
                    variances[c * nf + j] = (variances[c * nf + j] / counts[c] as f64).max(floor);
                }
            }
            let log_priors = match hyper.priors {
                Priors::Empirical => counts.iter().map(|&m| libm::log(m as f64 / n)).collect(),
                Priors::Uniform => vec![-libm::log(k as f64); k],
            };
            Params::Gaussian { means, variances, log_priors }
        }
        Variant::Logistic => {
            let feature_scale: Vec<f64> = feature_var.iter().map(|&v| if v > 0.0 { libm::sqrt(v) } else { 1.0 }).collect();
            let z: Vec<Vec<f64>> =
                features.iter().map(|f| (0..nf).map(|j| (f[j] - feature_mean[j]) / feature_scale[j]).collect()).collect();
            let (weights, bias) = gradient_descent(&z, &data.labels, k, hyper);
            Params::Logistic { feature_mean, feature_scale, weights, bias }
        }
    };
    let clf = Classifier { id, training_device: data.device, classes: k, feature_spec: spec, params };
    clf.validate()?;
    Ok(clf)
}

fn column_moments(rows: &[Vec<f64>], nf: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; nf];
    for r in rows {
        for j in 0..nf {
            mean[j] += r[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; nf];
    for r in rows {
        for j in 0..nf {
            var[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Full-batch gradient descent on mean cross-entropy plus an L2 penalty on
/// the weights. Starts from zero, so the result is fully determined by the
/// data and hyperparameters.
fn gradient_descent(z: &[Vec<f64>], labels: &[usize], k: usize, hyper: &Hyper) -> (Vec<f64>, Vec<f64>) {
    let nf = z[0].len();
    let n = z.len() as f64;
    let mut w = vec![0.0; k * nf];
    let mut b = vec![0.0; k];
    let mut gw = vec![0.0; k * nf];
    let mut gb = vec![0.0; k];
    let mut logits = vec![0.0; k];
    for _ in 0..hyper.iterations {
        gw.iter_mut().for_each(|g| *g = 0.0);
        gb.iter_mut().for_each(|g| *g = 0.0);
        for (x, &y) in z.iter().zip(labels) {
            for c in 0..k {
                logits[c] = b[c] + (0..nf).map(|j| w[c * nf + j] * x[j]).sum::<f64>();
            }
            let p = softmax(&logits);
            for c in 0..k {
                let err = p[c] - if c == y { 1.0 } else { 0.0 };
                gb[c] += err;
                for j in 0..nf {
                    gw[c * nf + j] += err * x[j];
                }
            }
        }
        for i in 0..k * nf {
            w[i] -= hyper.step * (gw[i] / n + hyper.l2 * w[i]);
        }
        for c in 0..k {
            b[c] -= hyper.step * gb[c] / n;
        }
    }
    (w, b)
}
