//! Waveform rendering: vibrato, mixed excitation and MLSA filtering.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::standard_normal;
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Column layout of a static acoustic frame:
/// `mcep0..mcepM, lf0, vuv, ap0..apB-1, vib_amp, vib_freq, vib_flag`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AcousticLayout {
    /// Mel-cepstral order `M` (there are `M + 1` coefficients).
    pub mcep_order: usize,
    pub ap_bands: usize,
}

impl Default for AcousticLayout {
    fn default() -> Self {
        Self {
            mcep_order: 11,
            ap_bands: 3,
        }
    }
}

/// Binary channels, thresholded at 0.5 after generation.
pub const FLAG_CHANNELS: [&str; 2] = ["vuv", "vib_flag"];

pub fn is_flag_channel(name: &str) -> bool {
    FLAG_CHANNELS.contains(&name)
}

impl AcousticLayout {
    pub fn dim(&self) -> usize {
        self.mcep_order + 1 + 2 + self.ap_bands + 3
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..=self.mcep_order).map(|i| format!("mcep{i}")).collect();
        names.push("lf0".to_string());
        names.push("vuv".to_string());
        names.extend((0..self.ap_bands).map(|i| format!("ap{i}")));
        for n in ["vib_amp", "vib_freq", "vib_flag"] {
            names.push(n.to_string());
        }
        names
    }

    /// Recover the layout from channel names.
    pub fn from_names(names: &[String]) -> Result<Self> {
        let mcep = names.iter().take_while(|n| n.starts_with("mcep")).count();
        let ap = names.iter().filter(|n| n.starts_with("ap")).count();
        if mcep == 0 {
            return Err(Error::Config("no mel-cepstral channels".into()));
        }
        let layout = Self {
            mcep_order: mcep - 1,
            ap_bands: ap,
        };
        if layout.names() != names {
            return Err(Error::Config(format!(
                "channel names {names:?} do not follow the acoustic layout"
            )));
        }
        Ok(layout)
    }

    pub fn mcep(&self) -> core::ops::Range<usize> {
        0..self.mcep_order + 1
    }

    pub fn lf0(&self) -> usize {
        self.mcep_order + 1
    }

    pub fn vuv(&self) -> usize {
        self.lf0() + 1
    }

    pub fn ap(&self) -> core::ops::Range<usize> {
        self.vuv() + 1..self.vuv() + 1 + self.ap_bands
    }

    pub fn vib_amp(&self) -> usize {
        self.ap().end
    }

    pub fn vib_freq(&self) -> usize {
        self.vib_amp() + 1
    }

    pub fn vib_flag(&self) -> usize {
        self.vib_amp() + 2
    }
}

/// Per-frame acoustic parameters in natural units.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticSequence {
    pub layout: AcousticLayout,
    /// `T x layout.dim()`.
    pub frames: Matrix,
    pub frame_shift: f64,
    pub sample_rate: u32,
}

impl AcousticSequence {
    pub fn new(layout: AcousticLayout, frames: Matrix, frame_shift: f64, sample_rate: u32) -> Result<Self> {
        if frames.cols() != layout.dim() {
            return Err(Error::Shape(format!(
                "{} columns for a {}-column layout",
                frames.cols(),
                layout.dim()
            )));
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("acoustic frame".into()));
        }
        for t in 0..frames.rows() {
            for c in [layout.vuv(), layout.vib_flag()] {
                let v = frames.get(t, c);
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Config(format!("flag value {v} at frame {t} is not 0 or 1")));
                }
            }
            if frames.get(t, layout.vib_freq()) < 0.0 {
                return Err(Error::Config(format!("negative vibrato rate at frame {t}")));
            }
        }
        Ok(Self {
            layout,
            frames,
            frame_shift,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    /// Samples per frame; errors unless the shift is a whole number of
    /// samples.
    pub fn hop(&self) -> Result<usize> {
        hop_samples(self.frame_shift, self.sample_rate)
    }
}

pub fn hop_samples(frame_shift: f64, sample_rate: u32) -> Result<usize> {
    let exact = frame_shift * sample_rate as f64;
    let n = libm::round(exact);
    if n < 1.0 || (exact - n).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "frame shift {frame_shift} s is not a whole number of samples at {sample_rate} Hz"
        )));
    }
    Ok(n as usize)
}

/// `lf0 + a sin(φ) ln2 / 1200` on flagged frames. φ restarts at 0 on every
/// 0→1 flag transition and advances by `2π f_v shift` after each flagged
/// frame.
pub fn apply_vibrato(lf0: &[f64], amp: &[f64], freq: &[f64], flag: &[f64], frame_shift: f64) -> Result<Vec<f64>> {
    let n = lf0.len();
    if amp.len() != n || freq.len() != n || flag.len() != n {
        return Err(Error::Shape(format!(
            "vibrato tracks of lengths {}, {}, {} for {n} frames",
            amp.len(),
            freq.len(),
            flag.len()
        )));
    }
    let mut out = lf0.to_vec();
    let mut phase = 0.0;
    let mut prev = false;
    for t in 0..n {
        let on = flag[t] >= 0.5;
        if !on {
            prev = false;
            continue;
        }
        if !prev {
            phase = 0.0;
        }
        out[t] += amp[t] * libm::sin(phase) * core::f64::consts::LN_2 / 1200.0;
        phase += 2.0 * core::f64::consts::PI * freq[t] * frame_shift;
        prev = true;
    }
    Ok(out)
}

/// Pulse/noise excitation, `f0.len() * hop` samples.
///
/// Voiced frames mix a pulse train (one unit pulse every `rate / f0`
/// samples, phase carried across frames) as `sqrt(1 - ap)` with Gaussian
/// noise as `sqrt(ap)`; unvoiced frames are noise only. Each frame is then
/// scaled to unit mean square unless it is silent (voiced, zero
/// aperiodicity and no pulse falling inside it).
pub fn make_excitation(
    f0: &[f64],
    voiced: &[bool],
    aperiodicity: &[f64],
    sample_rate: u32,
    frame_shift: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = f0.len();
    if voiced.len() != n || aperiodicity.len() != n {
        return Err(Error::Shape(format!(
            "excitation tracks of lengths {}, {} for {n} frames",
            voiced.len(),
            aperiodicity.len()
        )));
    }
    let hop = hop_samples(frame_shift, sample_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * hop);
    let mut countdown = 0.0;
    let mut frame = vec![0.0; hop];
    for t in 0..n {
        if voiced[t] && !(f0[t] > 0.0) {
            return Err(Error::NonPositiveF0 { frame: t, f0: f0[t] });
        }
        let ap = if voiced[t] { aperiodicity[t].clamp(0.0, 1.0) } else { 1.0 };
        let (wp, wn) = (libm::sqrt(1.0 - ap), libm::sqrt(ap));
        let period = if voiced[t] { sample_rate as f64 / f0[t] } else { 0.0 };
        if !voiced[t] {
            countdown = 0.0;
        }
        for v in frame.iter_mut() {
            let noise = standard_normal(&mut rng);
            let mut pulse = 0.0;
            if voiced[t] {
                if countdown <= 0.0 {
                    pulse = 1.0;
                    countdown += period;
                }
                countdown -= 1.0;
            }
            *v = wp * pulse + wn * noise;
        }
        let power = frame.iter().map(|v| v * v).sum::<f64>() / hop as f64;
        if power > 0.0 {
            let g = 1.0 / libm::sqrt(power);
            frame.iter_mut().for_each(|v| *v *= g);
        }
        out.extend_from_slice(&frame);
    }
    Ok(out)
}

/// Mean of each frame's aperiodicity bands.
pub fn band_average(ap: &Matrix) -> Vec<f64> {
    (0..ap.rows())
        .map(|t| {
            let r = ap.row(t);
            if r.is_empty() {
                0.0
            } else {
                r.iter().sum::<f64>() / r.len() as f64
            }
        })
        .collect()
}

/// Padé approximant coefficients of `exp` used by the MLSA filter.
const PADE4: [f64; 5] = [1.0, 0.4999273, 0.1067005, 0.01170221, 0.0005656279];
const PADE5: [f64; 6] = [1.0, 0.4999391, 0.1107098, 0.01369984, 0.0009564853, 0.00003041721];

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlsaConfig {
    pub alpha: f64,
    pub pade_order: usize,
    pub sample_rate: u32,
    pub frame_shift: f64,
}

impl MlsaConfig {
    /// α = 0.42 at 16 kHz and 0.55 at 48 kHz, Padé order 5.
    pub fn for_rate(sample_rate: u32, frame_shift: f64) -> Result<Self> {
        let alpha = match sample_rate {
            16000 => 0.42,
            48000 => 0.55,
            r => return Err(Error::Config(format!("no standard warping factor for {r} Hz"))),
        };
        let c = Self {
            alpha,
            pade_order: 5,
            sample_rate,
            frame_shift,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("warping factor {} outside [0, 1)", self.alpha)));
        }
        if self.pade_order != 4 && self.pade_order != 5 {
            return Err(Error::Config(format!("Padé order {} is not 4 or 5", self.pade_order)));
        }
        hop_samples(self.frame_shift, self.sample_rate).map(|_| ())
    }

    fn pade(&self) -> &'static [f64] {
        if self.pade_order == 4 {
            &PADE4
        } else {
            &PADE5
        }
    }
}

/// Largest `max_ω |Σ b(m) Φ_m(ω)|` (excluding the gain term) for which the
/// two-stage filter with the given Padé order stays accurate and stable.
pub fn stability_bound(pade_order: usize) -> f64 {
    if pade_order == 4 {
        4.5
    } else {
        6.2
    }
}

/// Mel-cepstrum to MLSA filter coefficients.
pub fn mc2b(mc: &[f64], alpha: f64) -> Vec<f64> {
    let mut b = mc.to_vec();
    for m in (0..b.len().saturating_sub(1)).rev() {
        b[m] = mc[m] - alpha * b[m + 1];
    }
    b
}

/// Streaming MLSA filter state for one utterance.
#[derive(Debug, Clone)]
pub struct MlsaFilter {
    alpha: f64,
    order: usize,
    pade: &'static [f64],
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl MlsaFilter {
    /// Filter for mel-cepstral order `order` (`order + 1` coefficients).
    pub fn new(order: usize, cfg: &MlsaConfig) -> Result<Self> {
        cfg.validate()?;
        let pd = cfg.pade_order;
        Ok(Self {
            alpha: cfg.alpha,
            order,
            pade: cfg.pade(),
            d1: vec![0.0; 2 * (pd + 1)],
            d2: vec![0.0; pd * (order + 2) + pd + 1],
        })
    }

    /// One output sample for input `x` under filter coefficients `b`.
    pub fn step(&mut self, x: f64, b: &[f64]) -> f64 {
        let x = x * libm::exp(b[0]);
        let x = self.stage1(x, b.get(1).copied().unwrap_or(0.0));
        if self.order >= 2 {
            self.stage2(x, b)
        } else {
            x
        }
    }

    fn stage1(&mut self, mut x: f64, b1: f64) -> f64 {
        let pd = self.pade.len() - 1;
        let a = self.alpha;
        let aa = 1.0 - a * a;
        let (d, pt) = self.d1.split_at_mut(pd + 1);
        let mut out = 0.0;
        for i in (1..=pd).rev() {
            d[i] = aa * pt[i - 1] + a * d[i];
            pt[i] = d[i] * b1;
            let v = pt[i] * self.pade[i];
            x += if i & 1 == 1 { v } else { -v };
            out += v;
        }
        pt[0] = x;
        out + x
    }

    fn stage2(&mut self, mut x: f64, b: &[f64]) -> f64 {
        let pd = self.pade.len() - 1;
        let m = self.order;
        let a = self.alpha;
        let (fir, pt) = self.d2.split_at_mut(pd * (m + 2));
        let mut out = 0.0;
        for i in (1..=pd).rev() {
            let d = &mut fir[(i - 1) * (m + 2)..i * (m + 2)];
            pt[i] = mlsa_fir(pt[i - 1], b, m, a, d);
            let v = pt[i] * self.pade[i];
            x += if i & 1 == 1 { v } else { -v };
            out += v;
        }
        pt[0] = x;
        out + x
    }
}

fn mlsa_fir(x: f64, b: &[f64], m: usize, a: f64, d: &mut [f64]) -> f64 {
    d[0] = x;
    d[1] = (1.0 - a * a) * d[0] + a * d[1];
    for i in 2..=m {
        d[i] += a * (d[i + 1] - d[i - 1]);
    }
    let y = (2..=m).map(|i| d[i] * b[i]).sum();
    for i in (2..=m + 1).rev() {
        d[i] = d[i - 1];
    }
    y
}

/// Filter `excitation` through MLSA filters built from `mcep` (`T x (M+1)`),
/// coefficients interpolated linearly between frame centres.
pub fn mlsa_synthesize(mcep: &Matrix, excitation: &[f64], cfg: &MlsaConfig) -> Result<Vec<f64>> {
    let hop = hop_samples(cfg.frame_shift, cfg.sample_rate)?;
    let frames = mcep.rows();
    if excitation.len() != frames * hop {
        return Err(Error::Shape(format!(
            "{} excitation samples for {frames} frames of {hop}",
            excitation.len()
        )));
    }
    if !mcep.is_finite() {
        return Err(Error::NonFinite("mel-cepstral coefficient".into()));
    }
    if frames == 0 {
        return Ok(Vec::new());
    }
    let order = mcep.cols() - 1;
    let b: Vec<Vec<f64>> = (0..frames).map(|t| mc2b(mcep.row(t), cfg.alpha)).collect();
    let mut filter = MlsaFilter::new(order, cfg)?;
    let mut coef = vec![0.0; order + 1];
    let mut out = Vec::with_capacity(excitation.len());
    for (s, &x) in excitation.iter().enumerate() {
        let u = ((s as f64 + 0.5) / hop as f64 - 0.5).clamp(0.0, (frames - 1) as f64);
        let i = (libm::floor(u) as usize).min(frames - 1);
        let j = (i + 1).min(frames - 1);
        let w = u - i as f64;
        for (c, (p, q)) in coef.iter_mut().zip(b[i].iter().zip(&b[j])) {
            *c = p + w * (q - p);
        }
        out.push(filter.step(x, &coef));
    }
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("filter output".into()));
    }
    Ok(out)
}

/// Full rendering: optional vibrato, excitation, MLSA filtering.
pub fn render(seq: &AcousticSequence, cfg: &MlsaConfig, seed: u64, add_vibrato: bool) -> Result<Vec<f64>> {
    if cfg.sample_rate != seq.sample_rate || (cfg.frame_shift - seq.frame_shift).abs() > 1e-12 {
        return Err(Error::Config("filter configuration does not match the sequence timing".into()));
    }
    let l = seq.layout;
    let f = &seq.frames;
    let mut lf0 = f.column(l.lf0());
    if add_vibrato {
        lf0 = apply_vibrato(
            &lf0,
            &f.column(l.vib_amp()),
            &f.column(l.vib_freq()),
            &f.column(l.vib_flag()),
            seq.frame_shift,
        )?;
    }
    let voiced: Vec<bool> = f.column(l.vuv()).iter().map(|&v| v >= 0.5).collect();
    let f0: Vec<f64> = lf0.iter().map(|&v| libm::exp(v)).collect();
    let ap = band_average(&f.select_cols(&l.ap().collect::<Vec<_>>()));
    let exc = make_excitation(&f0, &voiced, &ap, seq.sample_rate, seq.frame_shift, seed)?;
    mlsa_synthesize(&f.select_cols(&l.mcep().collect::<Vec<_>>()), &exc, cfg)
}

/// 16-bit PCM samples; the signal is scaled to peak at -1 dBFS only when it
/// would otherwise clip.
pub fn to_pcm16(samples: &[f64]) -> Result<Vec<i16>> {
    if !samples.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("waveform sample".into()));
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 1.0 { libm::pow(10.0, -1.0 / 20.0) / peak } else { 1.0 };
    Ok(samples
        .iter()
        .map(|v| libm::round((v * gain * 32767.0).clamp(-32768.0, 32767.0)) as i16)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;
    use rand::Rng;
    use rustfft::{num_complex::Complex, FftPlanner};

    #[test]
    fn layout_names_round_trip() {
        let l = AcousticLayout::default();
        assert_eq!(l.dim(), 20);
        assert_eq!(AcousticLayout::from_names(&l.names()).unwrap(), l);
        assert_eq!(l.names()[l.vib_flag()], "vib_flag");
        assert!(AcousticLayout::from_names(&l.names()[1..]).is_err());
    }

    #[test]
    fn vibrato() {
        let lf0 = vec![5.0; 100];
        let zero = apply_vibrato(&lf0, &[0.0; 100], &[5.0; 100], &[1.0; 100], 0.005).unwrap();
        assert_eq!(zero, lf0);
        let off = apply_vibrato(&lf0, &[100.0; 100], &[5.0; 100], &[0.0; 100], 0.005).unwrap();
        assert_eq!(off, lf0);
        // 5 Hz at 5 ms: a quarter period is 10 frames
        let on = apply_vibrato(&lf0, &[100.0; 100], &[5.0; 100], &[1.0; 100], 0.005).unwrap();
        assert_eq!(on[0], 5.0);
        assert_close(libm::exp(on[10]), libm::exp(5.0) * libm::pow(2.0, 100.0 / 1200.0), 1e-9);
        assert_close(on[40], 5.0, 1e-12);
        // restart at a new onset
        let mut flag = vec![1.0; 100];
        flag[50] = 0.0;
        let r = apply_vibrato(&lf0, &[100.0; 100], &[5.0; 100], &flag, 0.005).unwrap();
        assert_eq!(r[50], 5.0);
        assert_eq!(r[51], 5.0);
        assert_close(r[61], on[10], 1e-12);
        assert!(apply_vibrato(&lf0, &[0.0; 3], &[0.0; 100], &[0.0; 100], 0.005).is_err());
    }

    #[test]
    fn excitation_rules() {
        // unvoiced: normalized seeded noise
        let a = make_excitation(&[0.0; 4], &[false; 4], &[0.0; 4], 16000, 0.005, 3).unwrap();
        let b = make_excitation(&[0.0; 4], &[false; 4], &[0.0; 4], 16000, 0.005, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 320);
        // pulses every 160 samples at 100 Hz, nothing between
        let p = make_excitation(&[100.0; 8], &[true; 8], &[0.0; 8], 16000, 0.005, 3).unwrap();
        let idx: Vec<usize> = (0..p.len()).filter(|&i| p[i] != 0.0).collect();
        assert_eq!(idx, [0, 160, 320, 480]);
        assert!(matches!(
            make_excitation(&[0.0], &[true], &[0.0], 16000, 0.005, 0),
            Err(Error::NonPositiveF0 { frame: 0, .. })
        ));
        assert!(make_excitation(&[100.0], &[true], &[0.0], 16000, 0.0051, 0).is_err());
    }

    #[test]
    fn excitation_energy_is_unit_per_frame() {
        let mut r = rng(4);
        let n = 400;
        let f0: Vec<f64> = (0..n).map(|_| r.gen_range(200.0..800.0)).collect();
        let voiced: Vec<bool> = (0..n).map(|_| r.gen_bool(0.7)).collect();
        let ap: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
        for rate in [16000, 48000] {
            let e = make_excitation(&f0, &voiced, &ap, rate, 0.005, 9).unwrap();
            let hop = e.len() / n;
            for frame in e.chunks(hop) {
                let p = frame.iter().map(|v| v * v).sum::<f64>() / hop as f64;
                assert!((p - 1.0).abs() <= 0.1, "{p}");
            }
        }
    }

    fn cfg16() -> MlsaConfig {
        MlsaConfig::for_rate(16000, 0.005).unwrap()
    }

    #[test]
    fn coefficient_conversion() {
        let b = mc2b(&[1.0, 2.0, 3.0], 0.5);
        assert_eq!(b, [1.0 - 0.5 * 0.5, 2.0 - 1.5, 3.0]);
        assert_eq!(mc2b(&[0.3], 0.4), [0.3]);
    }

    #[test]
    fn trivial_filters() {
        let mut r = rng(1);
        let exc: Vec<f64> = (0..800).map(|_| r.gen_range(-1.0..1.0)).collect();
        let zeros = Matrix::zeros(10, 13);
        assert_eq!(mlsa_synthesize(&zeros, &exc, &cfg16()).unwrap(), exc);
        let mut gain = Matrix::zeros(10, 13);
        for t in 0..10 {
            gain.set(t, 0, 0.7);
        }
        let y = mlsa_synthesize(&gain, &exc, &cfg16()).unwrap();
        for (a, b) in y.iter().zip(&exc) {
            assert_close(*a, b * libm::exp(0.7), 1e-12);
        }
        let mut bad = Matrix::zeros(10, 13);
        bad.set(3, 2, f64::NAN);
        assert!(matches!(mlsa_synthesize(&bad, &exc, &cfg16()), Err(Error::NonFinite(_))));
        assert!(mlsa_synthesize(&zeros, &exc[..799], &cfg16()).is_err());
    }

    /// `exp(Σ c(m) cos(m ω̃))` with the all-pass warped frequency ω̃.
    fn warped_magnitude(c: &[f64], alpha: f64, omega: f64) -> f64 {
        let w = omega + 2.0 * libm::atan(alpha * libm::sin(omega) / (1.0 - alpha * libm::cos(omega)));
        let log: f64 = c.iter().enumerate().map(|(m, v)| v * libm::cos(m as f64 * w)).sum();
        libm::exp(log)
    }

    #[test]
    fn impulse_response_matches_fft_oracle() {
        let mut r = rng(11);
        for (rate, order) in [(16000u32, 24usize), (48000, 34)] {
            let cfg = MlsaConfig::for_rate(rate, 0.005).unwrap();
            let hop = hop_samples(cfg.frame_shift, rate).unwrap();
            for _ in 0..5 {
                let mut c: Vec<f64> = (0..=order).map(|m| r.gen_range(-1.0..1.0) * 0.8 / (1 + m) as f64).collect();
                c[0] = r.gen_range(-1.0..1.0);
                let frames = 8192 / hop + 1;
                let mut mc = Matrix::zeros(frames, order + 1);
                for t in 0..frames {
                    mc.row_mut(t).copy_from_slice(&c);
                }
                let mut imp = vec![0.0; frames * hop];
                imp[0] = 1.0;
                let h = mlsa_synthesize(&mc, &imp, &cfg).unwrap();
                let n = 8192;
                let mut buf: Vec<Complex<f64>> = h[..n].iter().map(|&v| Complex::new(v, 0.0)).collect();
                FftPlanner::new().plan_fft_forward(n).process(&mut buf);
                for (k, z) in buf.iter().enumerate().take(n / 2) {
                    let hz = k as f64 * rate as f64 / n as f64;
                    if !(100.0..=6000.0).contains(&hz) {
                        continue;
                    }
                    let omega = 2.0 * core::f64::consts::PI * k as f64 / n as f64;
                    let want = 20.0 * libm::log10(warped_magnitude(&c, cfg.alpha, omega));
                    let got = 20.0 * libm::log10(z.norm());
                    assert!((want - got).abs() <= 0.5, "{rate} Hz rate, {hz} Hz: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn bounded_on_stable_sets() {
        let mut r = rng(5);
        let cfg = cfg16();
        let order = 24;
        let frames = 1_000_000 / 80;
        let mut mc = Matrix::zeros(frames, order + 1);
        let mut c: Vec<f64> = vec![0.0; order + 1];
        for t in 0..frames {
            if t % 50 == 0 {
                c = (0..=order).map(|m| r.gen_range(-1.0..1.0) * 1.0 / (1 + m) as f64).collect();
            }
            mc.row_mut(t).copy_from_slice(&c);
        }
        let exc: Vec<f64> = (0..frames * 80).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y = mlsa_synthesize(&mc, &exc, &cfg).unwrap();
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak < 1e3, "{peak}");
    }

    #[test]
    fn pcm_conversion() {
        assert_eq!(to_pcm16(&[0.0, 0.5, -0.5]).unwrap(), [0, 16384, -16384]);
        let loud = to_pcm16(&[2.0, -4.0]).unwrap();
        let peak = (libm::pow(10.0, -1.0 / 20.0) * 32767.0) as i16;
        assert!((loud[1] as i32 + peak as i32).abs() <= 1);
        assert!((loud[0] as i32 - peak as i32 / 2).abs() <= 1);
        assert!(to_pcm16(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn render_sequence() {
        let l = AcousticLayout::default();
        let mut f = Matrix::zeros(20, l.dim());
        for t in 0..20 {
            f.set(t, l.lf0(), libm::log(220.0));
            f.set(t, l.vuv(), if t < 10 { 1.0 } else { 0.0 });
            f.set(t, l.vib_flag(), 1.0);
            f.set(t, l.vib_amp(), 50.0);
            f.set(t, l.vib_freq(), 5.0);
        }
        let seq = AcousticSequence::new(l, f.clone(), 0.005, 16000).unwrap();
        let y = render(&seq, &cfg16(), 1, true).unwrap();
        assert_eq!(y.len(), 1600);
        assert_eq!(y, render(&seq, &cfg16(), 1, true).unwrap());
        f.set(0, l.vuv(), 0.5);
        assert!(AcousticSequence::new(l, f, 0.005, 16000).is_err());
    }
}
