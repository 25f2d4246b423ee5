//! Training objective (spectral magnitude + SI-SDR + speaker cross-entropy)
//! and the SI-SDRi / SDRi evaluation metrics.

mod metrics;

pub use metrics::{sdr, sdri, si_sdr, si_sdri, MetricsReport, MetricsRow, MetricsSummary, METRIC_CAP_DB};

use crate::dsp::{stft_tensor, StftConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Added under the square root of every STFT magnitude.
pub const MAG_EPS: f64 = 1e-8;
/// Added to the SI-SDR denominator.
pub const SISDR_EPS: f64 = 1e-8;

fn check_pair(op: &'static str, est: &Tensor, target: &[f64]) -> Result<()> {
    if est.ndim() != 1 || est.numel() != target.len() {
        return Err(Error::shape(op, format!("estimate {:?} vs target of {} samples", est.shape(), target.len())));
    }
    Ok(())
}

/// `|X|` per bin of a packed `[2, F, T]` spectrum, shifted so `|0| = 0`.
fn magnitude(packed: &Tensor) -> Result<Tensor> {
    Ok(packed.square().sum_axis(0)?.add_scalar(MAG_EPS).sqrt().add_scalar(-MAG_EPS.sqrt()))
}

/// L1 distance of STFT magnitudes, normalized by the target's L1 magnitude.
pub fn loss_mag(est: &Tensor, target: &[f64], stft: &StftConfig) -> Result<Tensor> {
    check_pair("loss_mag", est, target)?;
    let tgt = Tensor::new(target.to_vec(), &[target.len()])?;
    let tmag = magnitude(&stft_tensor(&tgt, stft)?)?;
    let denom: f64 = tmag.data().iter().sum();
    if denom <= 0.0 {
        return Err(Error::invalid("loss_mag: target is silent"));
    }
    let emag = magnitude(&stft_tensor(est, stft)?)?;
    Ok(emag.sub(&tmag)?.abs().sum_all().scale(1.0 / denom))
}

/// Negative SI-SDR in dB, with the optimal scale `α = ⟨ŝ,s⟩/⟨s,s⟩`.
/// Returns the loss and `α`.
pub fn loss_sisdr(est: &Tensor, target: &[f64]) -> Result<(Tensor, f64)> {
    check_pair("loss_sisdr", est, target)?;
    let ss: f64 = target.iter().map(|v| v * v).sum();
    if ss <= 0.0 {
        return Err(Error::invalid("loss_sisdr: target is all zeros"));
    }
    let s = Tensor::new(target.to_vec(), &[target.len()])?;
    let alpha = est.mul(&s)?.sum_all().scale(1.0 / ss);
    let proj = s.mul(&alpha)?;
    let num = proj.square().sum_all();
    let den = est.sub(&proj)?.square().sum_all().add_scalar(SISDR_EPS);
    let a = alpha.item()?;
    Ok((num.div(&den)?.log10().scale(-10.0), a))
}

/// Softmax cross-entropy of `logits` `[N_s]` against `label`.
pub fn loss_ce(logits: &Tensor, label: usize) -> Result<Tensor> {
    if logits.ndim() != 1 {
        return Err(Error::shape("loss_ce", format!("expected [N_s] logits, got {:?}", logits.shape())));
    }
    let n = logits.numel();
    if label >= n {
        return Err(Error::invalid(format!("loss_ce: label {label} out of range for {n} classes")));
    }
    Ok(logits.log_softmax_lastdim()?.slice(0, label, label + 1)?.sum_all().neg())
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: Tensor,
    pub mag: f64,
    pub sisdr: f64,
    pub ce: f64,
    pub alpha: f64,
}

/// `(mag + sisdr) + ce`, unweighted.
pub fn loss_total(est: &Tensor, target: &[f64], logits: &Tensor, label: usize, stft: &StftConfig) -> Result<LossBreakdown> {
    let mag = loss_mag(est, target, stft)?;
    let (sisdr, alpha) = loss_sisdr(est, target)?;
    let ce = loss_ce(logits, label)?;
    let total = mag.add(&sisdr)?.add(&ce)?;
    Ok(LossBreakdown {
        mag: mag.item()?,
        sisdr: sisdr.item()?,
        ce: ce.item()?,
        alpha,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(v.to_vec(), &[v.len()]).unwrap()
    }

    fn signal(n: usize, seed: u64) -> Vec<f64> {
        (0..n).map(|i| ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 500.0 - 1.0).collect()
    }

    #[test]
    fn mag_examples() {
        let cfg = StftConfig::default();
        let s = signal(800, 1);
        assert_eq!(loss_mag(&t(&s), &s, &cfg).unwrap().item().unwrap(), 0.0);
        let zero = vec![0.0; 800];
        assert_eq!(loss_mag(&t(&zero), &s, &cfg).unwrap().item().unwrap(), 1.0);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        assert!(loss_mag(&t(&neg), &s, &cfg).unwrap().item().unwrap() < 1e-12);
        assert!(loss_mag(&t(&s), &zero, &cfg).is_err());
    }

    #[test]
    fn sisdr_hand_example() {
        let (l, a) = loss_sisdr(&t(&[1.0, 1.0, 0.0, 0.0]), &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(a, 1.0);
        let v = l.item().unwrap();
        // Only the ε in the denominator separates the loss from 0 dB.
        assert!(v.abs() < 1e-7, "{v}");
        assert_eq!(si_sdr(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn sisdr_scaled_target_hits_floor() {
        let s = signal(64, 2);
        let est: Vec<f64> = s.iter().map(|v| 3.0 * v).collect();
        let (l, a) = loss_sisdr(&t(&est), &s).unwrap();
        let num: f64 = s.iter().map(|v| 9.0 * v * v).sum();
        assert!((a - 3.0).abs() < 1e-12);
        assert!(l.item().unwrap() <= -10.0 * (num / SISDR_EPS).log10() + 1e-6);
        assert!(loss_sisdr(&t(&est), &[0.0; 64]).is_err());
    }

    #[test]
    fn sisdr_scale_invariance() {
        let s = signal(1000, 3);
        let e = signal(1000, 4);
        let e2: Vec<f64> = e.iter().map(|v| 2.0 * v).collect();
        let a = loss_sisdr(&t(&e), &s).unwrap().0.item().unwrap();
        let b = loss_sisdr(&t(&e2), &s).unwrap().0.item().unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn ce_examples() {
        let l = loss_ce(&t(&[0.0; 4]), 2).unwrap().item().unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.3863).abs() < 1e-4);
        let l = loss_ce(&t(&[0.0, 1e6, 0.0, 0.0]), 1).unwrap().item().unwrap();
        assert!(l.abs() < 1e-12);
        assert!(loss_ce(&t(&[0.0; 4]), 4).is_err());
    }

    #[test]
    fn total_is_exact_sum() {
        let cfg = StftConfig::default();
        let s = signal(500, 5);
        let e = signal(500, 6);
        let logits = t(&[0.3, -0.2, 1.0]);
        let b = loss_total(&t(&e), &s, &logits, 1, &cfg).unwrap();
        assert_eq!(b.total.item().unwrap(), (b.mag + b.sisdr) + b.ce);
        assert!(b.total.item().unwrap().is_finite());
    }
}
