use indexmap::IndexMap;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ParamStore;

/// Linear ramp from 0 to `max_lr` over the warmup epochs, then a half cosine
/// that reaches `min_lr` on the last step of the run.
pub fn lr_schedule(step: u64, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let warmup = (cfg.warmup_epochs * steps_per_epoch) as f64;
    let last = (cfg.max_epochs * steps_per_epoch) as f64 - 1.0;
    let s = step as f64;
    if s < warmup {
        return cfg.max_lr * s / warmup;
    }
    if last <= warmup {
        return cfg.max_lr;
    }
    let p = ((s - warmup) / (last - warmup)).min(1.0);
    cfg.min_lr + 0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * p).cos())
}

pub fn global_norm(grads: &IndexMap<String, Vec<f64>>) -> f64 {
    grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut IndexMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let c = max_norm / norm;
        grads.values_mut().flatten().for_each(|g| *g *= c);
    }
    norm
}

/// First error naming a non-finite gradient entry.
pub fn check_finite_grads(grads: &IndexMap<String, Vec<f64>>) -> Result<()> {
    for (name, g) in grads {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}[{i}] is {}", g[i])));
        }
    }
    Ok(())
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamW {
    pub m: IndexMap<String, Vec<f64>>,
    pub v: IndexMap<String, Vec<f64>>,
    /// Updates applied so far.
    pub t: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(n, p)| (n.to_string(), vec![0.0; p.data.len()])).collect();
        AdamW {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &IndexMap<String, Vec<f64>>, lr: f64, cfg: &TrainConfig) -> Result<()> {
        check_finite_grads(grads)?;
        let [b1, b2] = cfg.betas;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::invalid(format!("no gradient for parameter {name}")))?;
            let (m, v) = match (self.m.get_mut(name), self.v.get_mut(name)) {
                (Some(m), Some(v)) => (m, v),
                _ => return Err(Error::invalid(format!("optimizer state lacks parameter {name}"))),
            };
            if g.len() != p.data.len() || m.len() != p.data.len() {
                return Err(Error::shape("adamw", format!("{name}: {} values, gradient {}", p.data.len(), g.len())));
            }
            for i in 0..p.data.len() {
                p.data[i] -= lr * cfg.weight_decay * p.data[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::default();
        s.insert("w", vec![1], vec![v]).unwrap();
        s
    }

    fn grads(g: f64) -> IndexMap<String, Vec<f64>> {
        [("w".to_string(), vec![g])].into_iter().collect()
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig {
            warmup_epochs: 10,
            max_epochs: 110,
            ..TrainConfig::default()
        };
        let spe = 7;
        assert_eq!(lr_schedule(0, spe, &cfg), 0.0);
        assert_eq!(lr_schedule(70, spe, &cfg), 1e-3);
        assert!((lr_schedule(69, spe, &cfg) - 1e-3).abs() < 1e-3 / 70.0 + 1e-15);
        assert!((lr_schedule(110 * 7 - 1, spe, &cfg) - 1e-5).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = scalar_store(0.7);
        let mut opt = AdamW::new(&p);
        for _ in 0..5 {
            opt.step(&mut p, &grads(0.0), 1e-3, &cfg).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = scalar_store(1.0);
        let mut opt = AdamW::new(&p);
        opt.step(&mut p, &grads(1.0), 1e-3, &cfg).unwrap();
        let moved = 1.0 - p.get("w").unwrap().data[0];
        assert!((moved - 1e-3).abs() < 1e-10, "{moved}");
    }

    #[test]
    fn decay_is_geometric() {
        let cfg = TrainConfig::default();
        let mut p = scalar_store(2.0);
        let mut opt = AdamW::new(&p);
        for _ in 0..10 {
            opt.step(&mut p, &grads(0.0), 0.1, &cfg).unwrap();
        }
        let want = 2.0 * (1.0 - 0.1 * cfg.weight_decay).powi(10);
        assert!((p.get("w").unwrap().data[0] - want).abs() < 1e-14);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_store(1.0);
        let mut opt = AdamW::new(&p);
        let err = opt.step(&mut p, &grads(f64::NAN), 1e-3, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("w[0]"), "{err}");
        assert_eq!(p.get("w").unwrap().data[0], 1.0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g: IndexMap<String, Vec<f64>> = [("a".to_string(), vec![3.0, 4.0]), ("b".to_string(), vec![12.0])].into_iter().collect();
        assert_eq!(clip_global_norm(&mut g, 5.0), 13.0);
        assert!(global_norm(&g) <= 5.0 + 1e-12);
        let mut small: IndexMap<String, Vec<f64>> = [("a".to_string(), vec![0.3])].into_iter().collect();
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small["a"], vec![0.3]);
    }
}
