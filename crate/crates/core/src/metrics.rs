//! Image-quality metrics (PSNR, SSIM, weighted PSNR) and evaluation
//! reports with nearest / bicubic baselines.
//!
//! WPSNR has no single canonical definition; the one here weights squared
//! errors by a local-variance masking map `w = 1 / (1 + var_7x7 / var0)`
//! with `var0 = peak^2 / 100`, normalized to mean 1, and reports are
//! flagged accordingly. SSIM uses the metric's standard constants
//! (11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03). Metrics are
//! computed on full frames.

use crate::degrade::{classical_upsample, UpsampleMethod};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::tensor::Tensor;

/// Zero-error images report this instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

fn check_same_shape<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("metric inputs {} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}

fn mse<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    sum / a.numel() as f64
}

fn db_from_mse(peak: f64, mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// Peak signal-to-noise ratio in dB with per-pixel-mean MSE; identical
/// images return the 99 dB cap.
pub fn psnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    check_same_shape(a, b)?;
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::invalid(format!("peak must be positive, got {peak}")));
    }
    Ok(db_from_mse(peak, mse(a, b)))
}

/// 11x11 Gaussian window, sigma 1.5, normalized to sum 1.
fn ssim_window() -> [f64; 121] {
    let sigma = 1.5f64;
    let mut w = [0.0f64; 121];
    let mut sum = 0.0;
    for y in 0..11 {
        for x in 0..11 {
            let dy = y as f64 - 5.0;
            let dx = x as f64 - 5.0;
            let v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            w[y * 11 + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean local structural similarity over all fully interior 11x11
/// windows. Inputs must be single-channel and at least 11x11.
pub fn ssim<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    check_same_shape(a, b)?;
    let (n, c, h, w) = a.shape().as_nchw()?;
    if c != 1 {
        return Err(Error::shape(format!("ssim expects a single channel, got {c}")));
    }
    if h < 11 || w < 11 {
        return Err(Error::shape(format!("ssim needs at least 11x11 images, got {h}x{w}")));
    }
    let window = ssim_window();
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let mut total = 0.0;
    let mut count = 0usize;
    for plane in 0..n {
        let pa = &a.values()[plane * h * w..(plane + 1) * h * w];
        let pb = &b.values()[plane * h * w..(plane + 1) * h * w];
        for y0 in 0..=(h - 11) {
            for x0 in 0..=(w - 11) {
                let (mut ma, mut mb) = (0.0f64, 0.0f64);
                let (mut saa, mut sbb, mut sab) = (0.0f64, 0.0f64, 0.0f64);
                for wy in 0..11 {
                    for wx in 0..11 {
                        let g = window[wy * 11 + wx];
                        let va = pa[(y0 + wy) * w + x0 + wx].as_f64();
                        let vb = pb[(y0 + wy) * w + x0 + wx].as_f64();
                        ma += g * va;
                        mb += g * vb;
                        saa += g * va * va;
                        sbb += g * vb * vb;
                        sab += g * va * vb;
                    }
                }
                let var_a = saa - ma * ma;
                let var_b = sbb - mb * mb;
                let cov = sab - ma * mb;
                let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                total += s;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Local variance of the reference over 7x7 windows clipped at image
/// borders; one value per pixel.
fn local_variance(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let r = 3isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut sum, mut sq, mut n) = (0.0f64, 0.0f64, 0.0f64);
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = y + dy;
                    let xx = x + dx;
                    if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let v = plane[yy as usize * w + xx as usize];
                    sum += v;
                    sq += v * v;
                    n += 1.0;
                }
            }
            let mean = sum / n;
            out[y as usize * w + x as usize] = (sq / n - mean * mean).max(0.0);
        }
    }
    out
}

/// Variance-masked weighted PSNR: squared errors are weighted by
/// `1 / (1 + var_local / (peak^2 / 100))` computed on the reference `a`,
/// with the weights normalized to mean 1. Equal to [`psnr`] on images
/// with zero local variance everywhere.
pub fn wpsnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    check_same_shape(a, b)?;
    let (n, c, h, w) = a.shape().as_nchw()?;
    if c != 1 {
        return Err(Error::shape(format!("wpsnr expects a single channel, got {c}")));
    }
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::invalid(format!("peak must be positive, got {peak}")));
    }
    let var0 = peak * peak / 100.0;
    let mut weighted_sum = 0.0f64;
    let mut weight_sum = 0.0f64;
    for plane in 0..n {
        let pa: Vec<f64> = a.values()[plane * h * w..(plane + 1) * h * w]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let pb = &b.values()[plane * h * w..(plane + 1) * h * w];
        let var = local_variance(&pa, h, w);
        for i in 0..h * w {
            let weight = 1.0 / (1.0 + var[i] / var0);
            let d = pa[i] - pb[i].as_f64();
            weighted_sum += weight * d * d;
            weight_sum += weight;
        }
    }
    // Normalizing weights to mean 1 is the same as dividing by their sum.
    let wmse = weighted_sum / weight_sum;
    Ok(db_from_mse(peak, wmse))
}

/// One evaluation pair: the low-resolution input fed to the model and the
/// ground-truth high-resolution frame.
#[derive(Debug, Clone)]
pub struct EvalPair<T> {
    pub id: String,
    pub lr: Tensor<T>,
    pub hr: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub wpsnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsAggregate {
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
    pub wpsnr: f64,
}

/// Per-image rows for the model plus aggregate means for the model and
/// the classical baselines.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub model: String,
    pub dataset: String,
    pub d: usize,
    pub peak: f64,
    pub rows: Vec<MetricsRow>,
    pub aggregates: Vec<MetricsAggregate>,
    pub notes: Vec<String>,
}

impl MetricsReport {
    /// Per-image CSV: `id,psnr,ssim,wpsnr`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,psnr,ssim,wpsnr\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.4},{:.6},{:.4}\n", r.id, r.psnr, r.ssim, r.wpsnr));
        }
        s
    }

    /// Aligned plain-text table of the aggregates.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "model {} on {} ({}x, {} images, peak {})\n",
            self.model,
            self.dataset,
            self.d,
            self.rows.len(),
            self.peak
        );
        s.push_str(&format!(
            "{:<12} {:>9} {:>8} {:>9}\n",
            "method", "PSNR", "SSIM", "WPSNR"
        ));
        for a in &self.aggregates {
            s.push_str(&format!(
                "{:<12} {:>9.4} {:>8.4} {:>9.4}\n",
                a.method, a.psnr, a.ssim, a.wpsnr
            ));
        }
        for note in &self.notes {
            s.push_str(&format!("# {note}\n"));
        }
        s
    }

    pub fn aggregate(&self, method: &str) -> Option<&MetricsAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Run inference on every pair and score the outputs against the ground
/// truth, alongside nearest and bicubic baselines upsampled by the
/// model's factor. Deterministic for a fixed model and pair list.
pub fn evaluate<T: Element>(
    model: &NetworkGraph<T>,
    pairs: &[EvalPair<T>],
    peak: f64,
    dataset: &str,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("evaluate needs at least one pair"));
    }
    let d = model.descriptor.d as usize;
    if d == 0 {
        return Err(Error::invalid(format!(
            "builder '{}' is not an upsampler",
            model.descriptor.builder
        )));
    }
    type Scores = (Vec<f64>, Vec<f64>, Vec<f64>);
    let mut rows = Vec::with_capacity(pairs.len());
    let mut agg: std::collections::BTreeMap<&str, Scores> = std::collections::BTreeMap::new();
    for pair in pairs {
        let out = model.forward(&pair.lr)?;
        if out.shape() != pair.hr.shape() {
            return Err(Error::shape(format!(
                "model output {} does not match ground truth {}",
                out.shape(),
                pair.hr.shape()
            )));
        }
        let nearest = classical_upsample(&pair.lr, d, UpsampleMethod::Nearest)?;
        let bicubic = classical_upsample(&pair.lr, d, UpsampleMethod::Bicubic)?;
        for (method, img) in [("model", &out), ("nearest", &nearest), ("bicubic", &bicubic)] {
            let p = psnr(img, &pair.hr, peak)?;
            let s = ssim(img, &pair.hr, peak)?;
            let wp = wpsnr(&pair.hr, img, peak)?;
            let e = agg.entry(method).or_default();
            e.0.push(p);
            e.1.push(s);
            e.2.push(wp);
            if method == "model" {
                rows.push(MetricsRow { id: pair.id.clone(), psnr: p, ssim: s, wpsnr: wp });
            }
        }
    }
    let aggregates = agg
        .into_iter()
        .map(|(method, (p, s, wp))| MetricsAggregate {
            method: method.to_string(),
            psnr: mean(&p),
            ssim: mean(&s),
            wpsnr: mean(&wp),
        })
        .collect();
    Ok(MetricsReport {
        model: model.descriptor.builder.clone(),
        dataset: dataset.to_string(),
        d,
        peak,
        rows,
        aggregates,
        notes: vec![
            "wpsnr (variance-masked): local-variance weights, not cross-paper comparable".into(),
            "ssim: 11x11 gaussian window sigma 1.5, K1 0.01, K2 0.03".into(),
            "metrics computed on full frames".into(),
        ],
    })
}
