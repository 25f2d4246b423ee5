use crate::datagen::{DatasetManifest, MixtureSample, Split};
use crate::error::Result;
use crate::losses::{MetricsReport, MetricsRow};
use crate::model::{Mode, Model};

/// Anything that maps a mixture/enrollment pair to a target estimate.
pub trait Extractor {
    fn extract(&self, sample: &MixtureSample) -> Result<Vec<f64>>;
}

impl Extractor for Model {
    fn extract(&self, sample: &MixtureSample) -> Result<Vec<f64>> {
        let out = self.forward(&self.bind(false)?, &sample.y, &sample.a, Mode::Eval)?;
        Ok(out.estimate.to_vec())
    }
}

/// Returns the mixture unchanged.
pub struct Identity;

impl Extractor for Identity {
    fn extract(&self, sample: &MixtureSample) -> Result<Vec<f64>> {
        Ok(sample.y.samples.clone())
    }
}

/// Returns the clean target.
pub struct Oracle;

impl Extractor for Oracle {
    fn extract(&self, sample: &MixtureSample) -> Result<Vec<f64>> {
        Ok(sample.s.samples.clone())
    }
}

pub fn evaluate(ex: &dyn Extractor, samples: &[MixtureSample]) -> Result<MetricsReport> {
    let rows = samples
        .iter()
        .map(|s| MetricsRow::compute(s.id.clone(), &ex.extract(s)?, &s.s.samples, &s.y.samples))
        .collect::<Result<_>>()?;
    Ok(MetricsReport { rows })
}

/// Evaluates one split, reading each row's audio as it goes.
pub fn evaluate_manifest(ex: &dyn Extractor, manifest: &DatasetManifest, split: Split) -> Result<MetricsReport> {
    let mut rows = Vec::new();
    for entry in manifest.split(split) {
        let s = manifest.load_sample(entry)?;
        rows.push(MetricsRow::compute(s.id.clone(), &ex.extract(&s)?, &s.s.samples, &s.y.samples)?);
    }
    Ok(MetricsReport { rows })
}

/// Fraction of samples whose enrollment is classified as the target speaker.
pub fn speaker_accuracy(model: &Model, samples: &[MixtureSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let b = model.bind(false)?;
    let mut hits = 0;
    for s in samples {
        let logits = model.speaker_logits(&b, &s.a)?;
        let best = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        hits += usize::from(best == s.speaker_id);
    }
    Ok(hits as f64 / samples.len() as f64)
}
