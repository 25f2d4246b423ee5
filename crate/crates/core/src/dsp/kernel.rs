use super::StftConfig;
use crate::error::Result;
use crate::tensor::linalg_gemm as gemm;

/// Precomputed window and DFT bases for one [`StftConfig`].
#[derive(Debug, Clone)]
pub struct StftKernel {
    pub config: StftConfig,
    window: Vec<f64>,
    /// `cos(2πfn/N)`, `[F, N]`.
    cos: Vec<f64>,
    /// `−sin(2πfn/N)`, `[F, N]`.
    nsin: Vec<f64>,
    /// Inverse real DFT bases, `[F, N]`, with the one-sided weights and 1/N
    /// folded in. The imaginary basis is zero at DC and Nyquist.
    icos: Vec<f64>,
    isin: Vec<f64>,
}

/// Index into a length-`n` signal under repeated reflection (no edge repeat).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let j = i.rem_euclid(period);
    if j < n as isize {
        j as usize
    } else {
        (period - j) as usize
    }
}

impl StftKernel {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let n = config.frame_len;
        let bins = config.bins();
        let mut cos = vec![0.0; bins * n];
        let mut nsin = vec![0.0; bins * n];
        let mut icos = vec![0.0; bins * n];
        let mut isin = vec![0.0; bins * n];
        for f in 0..bins {
            let edge = f == 0 || f == bins - 1;
            let weight = if edge { 1.0 } else { 2.0 } / n as f64;
            for t in 0..n {
                let phase = 2.0 * std::f64::consts::PI * ((f * t) % n) as f64 / n as f64;
                let (s, c) = phase.sin_cos();
                cos[f * n + t] = c;
                nsin[f * n + t] = -s;
                icos[f * n + t] = weight * c;
                isin[f * n + t] = if edge { 0.0 } else { -weight * s };
            }
        }
        Ok(StftKernel {
            window: config.window.coefficients(n),
            config,
            cos,
            nsin,
            icos,
            isin,
        })
    }

    pub fn bins(&self) -> usize {
        self.config.bins()
    }

    fn pad(&self) -> usize {
        self.config.frame_len / 2
    }

    fn padded_len(&self, frames: usize) -> usize {
        (frames - 1) * self.config.hop + self.config.frame_len
    }

    /// Windowed frames `[T, N]` of a signal.
    fn frames(&self, x: &[f64]) -> (Vec<f64>, usize) {
        let n = self.config.frame_len;
        let frames = self.config.num_frames(x.len());
        let pad = self.pad() as isize;
        let mut out = vec![0.0; frames * n];
        for t in 0..frames {
            let start = (t * self.config.hop) as isize - pad;
            for k in 0..n {
                out[t * n + k] = self.window[k] * x[reflect(start + k as isize, x.len())];
            }
        }
        (out, frames)
    }

    /// Real and imaginary parts, each `[F, T]`.
    pub fn analyze(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (fr, frames) = self.frames(x);
        let (n, bins) = (self.config.frame_len, self.bins());
        let mut re = vec![0.0; bins * frames];
        let mut im = vec![0.0; bins * frames];
        gemm(bins, n, frames, &self.cos, false, &fr, true, &mut re, false);
        gemm(bins, n, frames, &self.nsin, false, &fr, true, &mut im, false);
        (re, im)
    }

    /// Adjoint of [`StftKernel::analyze`]: maps gradients on `[F, T]` back
    /// to the `len`-sample input.
    pub fn analyze_adjoint(&self, g_re: &[f64], g_im: &[f64], len: usize) -> Vec<f64> {
        let (n, bins) = (self.config.frame_len, self.bins());
        let frames = self.config.num_frames(len);
        let mut gf = vec![0.0; frames * n];
        gemm(frames, bins, n, g_re, true, &self.cos, false, &mut gf, false);
        gemm(frames, bins, n, g_im, true, &self.nsin, false, &mut gf, true);
        let pad = self.pad() as isize;
        let mut gx = vec![0.0; len];
        for t in 0..frames {
            let start = (t * self.config.hop) as isize - pad;
            for k in 0..n {
                gx[reflect(start + k as isize, len)] += self.window[k] * gf[t * n + k];
            }
        }
        gx
    }

    /// Overlap-add denominator `Σ_t w²(m − t·hop)` over the padded axis.
    fn window_energy(&self, frames: usize) -> Vec<f64> {
        let n = self.config.frame_len;
        let mut d = vec![0.0; self.padded_len(frames)];
        for t in 0..frames {
            for k in 0..n {
                d[t * self.config.hop + k] += self.window[k] * self.window[k];
            }
        }
        d
    }

    fn inverse_frames(&self, re: &[f64], im: &[f64], frames: usize) -> Vec<f64> {
        let (n, bins) = (self.config.frame_len, self.bins());
        let mut fr = vec![0.0; frames * n];
        gemm(frames, bins, n, re, true, &self.icos, false, &mut fr, false);
        gemm(frames, bins, n, im, true, &self.isin, false, &mut fr, true);
        fr
    }

    pub fn synthesize(&self, re: &[f64], im: &[f64], frames: usize, out_len: usize) -> Vec<f64> {
        let n = self.config.frame_len;
        let fr = self.inverse_frames(re, im, frames);
        let mut acc = vec![0.0; self.padded_len(frames)];
        for t in 0..frames {
            for k in 0..n {
                acc[t * self.config.hop + k] += self.window[k] * fr[t * n + k];
            }
        }
        let d = self.window_energy(frames);
        let pad = self.pad();
        (0..out_len)
            .map(|m| match acc.get(m + pad) {
                Some(v) => v / d[m + pad].max(1e-12),
                None => 0.0,
            })
            .collect()
    }

    /// Adjoint of [`StftKernel::synthesize`]: gradient on the output samples
    /// to gradients on `[F, T]` real and imaginary parts.
    pub fn synthesize_adjoint(&self, g: &[f64], frames: usize) -> (Vec<f64>, Vec<f64>) {
        let (n, bins) = (self.config.frame_len, self.bins());
        let d = self.window_energy(frames);
        let pad = self.pad();
        let mut gp = vec![0.0; d.len()];
        for (m, &gv) in g.iter().enumerate() {
            if let Some(dv) = d.get(m + pad) {
                gp[m + pad] = gv / dv.max(1e-12);
            }
        }
        let mut gf = vec![0.0; frames * n];
        for t in 0..frames {
            for k in 0..n {
                gf[t * n + k] = self.window[k] * gp[t * self.config.hop + k];
            }
        }
        let mut g_re = vec![0.0; bins * frames];
        let mut g_im = vec![0.0; bins * frames];
        gemm(bins, n, frames, &self.icos, false, &gf, true, &mut g_re, false);
        gemm(bins, n, frames, &self.isin, false, &gf, true, &mut g_im, false);
        (g_re, g_im)
    }
}
