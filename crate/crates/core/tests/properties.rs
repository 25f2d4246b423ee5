use indexmap::IndexMap;
use proptest::prelude::*;

use xcrossnet::datagen::{mix_at_snr, snr_db, tile_to};
use xcrossnet::dsp::{istft, stft, StftConfig, Waveform, SAMPLE_RATE};
use xcrossnet::losses::{si_sdr, si_sdri, METRIC_CAP_DB};
use xcrossnet::trainer::{clip_global_norm, global_norm, lr_schedule, TrainConfig};

fn signal(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn si_sdr_ignores_estimate_scale(s in signal(8..256), seed in 0u64..1000, beta in 1e-3f64..1e3) {
        let e: Vec<f64> = s.iter().enumerate().map(|(i, v)| v + 0.3 * ((i as u64 * 7 + seed) % 11) as f64 / 11.0).collect();
        prop_assume!(energy(&s) > 1e-3);
        let scaled: Vec<f64> = e.iter().map(|v| beta * v).collect();
        let (a, b) = (si_sdr(&e, &s).unwrap(), si_sdr(&scaled, &s).unwrap());
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn si_sdr_bounded_by_cap(e in signal(4..128), s in signal(4..128)) {
        let n = e.len().min(s.len());
        prop_assume!(energy(&s[..n]) > 1e-6);
        let v = si_sdr(&e[..n], &s[..n]).unwrap();
        prop_assert!(v.abs() <= METRIC_CAP_DB);
    }

    #[test]
    fn identity_estimate_has_zero_improvement(s in signal(8..128), i in signal(8..128)) {
        let n = s.len().min(i.len());
        let y: Vec<f64> = s[..n].iter().zip(&i[..n]).map(|(a, b)| a + b).collect();
        prop_assume!(energy(&s[..n]) > 1e-3);
        prop_assert_eq!(si_sdri(&y, &s[..n], &y).unwrap(), 0.0);
    }

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(g in prop::collection::vec(-50.0f64..50.0, 1..40), max in 0.1f64..10.0) {
        let mut grads: IndexMap<String, Vec<f64>> = IndexMap::new();
        let half = g.len() / 2;
        grads.insert("a".into(), g[..half].to_vec());
        grads.insert("b".into(), g[half..].to_vec());
        let before = grads.clone();
        let pre = clip_global_norm(&mut grads, max);
        prop_assert!((pre - global_norm(&before)).abs() <= 1e-12 * pre.max(1.0));
        prop_assert!(global_norm(&grads) <= max * (1.0 + 1e-12));
        let c = if pre > max { max / pre } else { 1.0 };
        for (k, v) in &grads {
            for (x, y) in v.iter().zip(&before[k]) {
                prop_assert!((x - c * y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn schedule_stays_in_range_and_decays(warmup in 0usize..5, extra in 1usize..10, spe in 1usize..20) {
        let cfg = TrainConfig { warmup_epochs: warmup, max_epochs: warmup + extra, ..Default::default() };
        let total = (cfg.max_epochs * spe) as u64;
        let w = (warmup * spe) as u64;
        let mut prev = f64::INFINITY;
        for step in 0..total {
            let lr = lr_schedule(step, spe, &cfg);
            prop_assert!((0.0..=cfg.max_lr).contains(&lr));
            if step >= w {
                prop_assert!(lr >= cfg.min_lr - 1e-15 && lr <= prev + 1e-15);
                prev = lr;
            }
        }
        prop_assert!((lr_schedule(total - 1, spe, &cfg) - cfg.min_lr).abs() < 1e-12 || total - 1 == w);
    }

    #[test]
    fn schedule_is_continuous_at_warmup_end(warmup in 1usize..5, spe in 1usize..50) {
        let cfg = TrainConfig { warmup_epochs: warmup, max_epochs: warmup + 3, ..Default::default() };
        let w = (warmup * spe) as u64;
        // The cosine starts at max_lr and the ramp's last step is one increment below it.
        prop_assert!((lr_schedule(w, spe, &cfg) - cfg.max_lr).abs() < 1e-15);
        let before = lr_schedule(w - 1, spe, &cfg);
        prop_assert!(cfg.max_lr - before <= cfg.max_lr / (warmup * spe) as f64 + 1e-15);
    }

    #[test]
    fn stft_round_trip(x in signal(200..3000)) {
        let cfg = StftConfig::for_bins(65).unwrap();
        let w = Waveform::new(x.clone(), SAMPLE_RATE).unwrap();
        let back = istft(&stft(&w, &cfg).unwrap(), x.len()).unwrap();
        let err: f64 = x.iter().zip(&back.samples).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-10 * energy(&x).sqrt().max(1e-300));
    }

    #[test]
    fn mixing_hits_requested_snr(a in signal(50..400), b in signal(50..400), snr in -5.0f64..10.0) {
        prop_assume!(energy(&a) / a.len() as f64 > 1e-3 && energy(&b) / b.len() as f64 > 1e-3);
        let m = mix_at_snr(&Waveform::new(a, SAMPLE_RATE).unwrap(), &Waveform::new(b, SAMPLE_RATE).unwrap(), snr).unwrap();
        prop_assert!((snr_db(&m.target.samples, &m.interferer.samples) - snr).abs() < 1e-9);
        prop_assert_eq!(m.y.len(), m.target.len());
    }

    #[test]
    fn tiling_is_cyclic(x in signal(1..50), len in 0usize..200) {
        let t = tile_to(&x, len);
        prop_assert_eq!(t.len(), len);
        for (i, v) in t.iter().enumerate() {
            prop_assert_eq!(*v, x[i % x.len()]);
        }
    }
}
