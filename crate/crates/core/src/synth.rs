//! Deterministic synthetic data.
//!
//! Two generators: hierarchical point clouds living directly on the
//! hyperboloid, and pseudo-EEG epochs whose classes form a families x variants
//! tree and whose recording domains differ by a controllable shift.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frechet::frechet_mean;
use crate::gyro::{gyroadd, gyroinverse};
use crate::manifold::{exp_map, exp_origin, parallel_transport, random_unit, Curvature, LorentzPoint, TangentVector};
use crate::rng::{derive_seed, seeded};

// ---------------------------------------------------------------------------
// Manifold-native clouds

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSpec {
    pub n_domains: usize,
    /// Children per node of the two-level class tree; there are `branching^2` classes.
    pub branching: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub shift: f64,
    /// Tangent length from 0̄ to a family prototype.
    pub family_radius: f64,
    /// Tangent length from a family prototype to its variants.
    pub variant_radius: f64,
    pub seed: u64,
}

impl Default for CloudSpec {
    fn default() -> Self {
        CloudSpec {
            n_domains: 2,
            branching: 2,
            per_class: 20,
            dim: 4,
            spread: 0.1,
            shift: 1.0,
            family_radius: 2.0,
            variant_radius: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cloud {
    pub points: Vec<LorentzPoint>,
    pub labels: Vec<u32>,
    pub domains: Vec<u32>,
    /// Gyrotranslation `p_d` applied to every sample of domain `d`.
    pub domain_shifts: Vec<LorentzPoint>,
    pub curvature: Curvature,
}

impl Cloud {
    pub fn domain_points(&self, d: u32) -> Vec<LorentzPoint> {
        self.points.iter().zip(&self.domains).filter(|(_, &x)| x == d).map(|(p, _)| p.clone()).collect()
    }
}

/// Gaussian tangent vector with per-coordinate deviation `sigma` at `base`.
fn gaussian_tangent<R: Rng + ?Sized>(rng: &mut R, base: &LorentzPoint, sigma: f64) -> Result<TangentVector> {
    let k = base.curvature();
    let z: Vec<f64> = (0..base.dim()).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    let at0 = TangentVector::at_origin(&z, k);
    parallel_transport(&LorentzPoint::origin(base.dim(), k), base, &at0)
}

/// Two-level hierarchical clouds with a per-domain left gyrotranslation.
///
/// Class prototypes sit at `exp_0(r_f u_f + r_v w_fv)` and are then
/// gyro-centered so their Fréchet mean is 0̄; domain `d` maps every sample `x`
/// to `p_d ⊕ x` with `d(0̄, p_d) = shift`.
pub fn gen_manifold_clouds(spec: &CloudSpec, k: Curvature) -> Result<Cloud> {
    if spec.branching < 2 || spec.dim < 2 || spec.n_domains == 0 || spec.per_class == 0 {
        return Err(Error::Validation(format!(
            "cloud tree needs branching >= 2, dim >= 2 and nonempty domains/classes (got branching {}, dim {})",
            spec.branching, spec.dim
        )));
    }
    if !(spec.spread >= 0.0) || !(spec.shift >= 0.0) {
        return Err(Error::Validation("spread and shift must be nonnegative".into()));
    }
    let mut rng = seeded(spec.seed);
    let b = spec.branching;
    let mut protos = Vec::with_capacity(b * b);
    for _ in 0..b {
        let u = random_unit(&mut rng, spec.dim);
        for _ in 0..b {
            let w = random_unit(&mut rng, spec.dim);
            let t: Vec<f64> = u.iter().zip(&w).map(|(a, c)| spec.family_radius * a + spec.variant_radius * c).collect();
            protos.push(exp_origin(&t, k));
        }
    }
    let center = gyroinverse(&frechet_mean(&protos)?.mean);
    let protos = protos.iter().map(|p| gyroadd(&center, p)).collect::<Result<Vec<_>>>()?;

    let mut cloud = Cloud { points: vec![], labels: vec![], domains: vec![], domain_shifts: vec![], curvature: k };
    for d in 0..spec.n_domains {
        let mut drng = seeded(derive_seed(spec.seed, d as u64 + 1));
        let dir = random_unit(&mut drng, spec.dim);
        let pd = exp_origin(&dir.iter().map(|x| x * spec.shift).collect::<Vec<_>>(), k);
        for (c, proto) in protos.iter().enumerate() {
            for _ in 0..spec.per_class {
                let x = exp_map(proto, &gaussian_tangent(&mut drng, proto, spec.spread)?)?;
                cloud.points.push(gyroadd(&pd, &x)?);
                cloud.labels.push(c as u32);
                cloud.domains.push(d as u32);
            }
        }
        cloud.domain_shifts.push(pd);
    }
    Ok(cloud)
}

// ---------------------------------------------------------------------------
// Pseudo-EEG epochs

/// Per-domain recording distortion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// Row-major `P x P` rotation `exp(s A)`, `A` random skew-symmetric.
    pub mixing: Vec<f64>,
    pub gain: f64,
    pub noise_sigma: f64,
    pub latency_shift: i64,
    /// Amplitude of a domain-specific background rhythm added before mixing.
    pub background_amplitude: f64,
    pub background_freq: f64,
    pub background_pattern: Vec<f64>,
}

impl ShiftSpec {
    pub fn identity(p: usize) -> Self {
        let mut mixing = vec![0.0; p * p];
        for i in 0..p {
            mixing[i * p + i] = 1.0;
        }
        ShiftSpec {
            mixing,
            gain: 1.0,
            noise_sigma: 0.0,
            latency_shift: 0,
            background_amplitude: 0.0,
            background_freq: 10.0,
            background_pattern: vec![0.0; p],
        }
    }
}

/// How per-domain [`ShiftSpec`]s are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftPolicy {
    /// Position `s` along the rotation geodesic from the identity.
    pub strength: f64,
    /// Standard deviation of the log-gain.
    pub log_gain_sd: f64,
    /// Extra white sensor noise, in units of the clean signal's RMS.
    pub noise_sigma: f64,
    /// Latency shifts are uniform in `[-max_latency, max_latency]` samples.
    pub max_latency: u32,
    /// Background rhythm amplitude, in units of the clean signal's RMS.
    pub background: f64,
}

impl ShiftPolicy {
    pub fn none() -> Self {
        ShiftPolicy { strength: 0.0, log_gain_sd: 0.0, noise_sigma: 0.0, max_latency: 0, background: 0.0 }
    }

    pub fn moderate() -> Self {
        Self::with_strength(0.5)
    }

    /// One knob for all components: mixing blend `s`, and gain spread,
    /// sensor noise, latency jitter and background all proportional to `s`.
    pub fn with_strength(s: f64) -> Self {
        ShiftPolicy {
            strength: s,
            log_gain_sd: 1.0 * s,
            noise_sigma: 0.25 * s,
            max_latency: (2.0 * s).round() as u32,
            background: 1.0 * s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::Validation(format!("shift strength {} outside [0, 1]", self.strength)));
        }
        if !(self.log_gain_sd >= 0.0 && self.noise_sigma >= 0.0 && self.background >= 0.0) {
            return Err(Error::Validation("shift spreads must be nonnegative".into()));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, p: usize, fs: f64, rms: f64) -> ShiftSpec {
        // a linear blend with a random orthogonal matrix can be singular (a
        // reflection at s = 1/2), so walk the rotation group instead
        let mut a = vec![0.0; p * p];
        let sd = (1.0 / p as f64).sqrt();
        for i in 0..p {
            for j in i + 1..p {
                let g: f64 = rng.sample::<f64, _>(StandardNormal) * sd * self.strength;
                a[i * p + j] = g;
                a[j * p + i] = -g;
            }
        }
        let mixing = expm(&a, p);
        let gain = (self.log_gain_sd * rng.sample::<f64, _>(StandardNormal)).exp();
        let ml = self.max_latency as i64;
        let latency_shift = if ml > 0 { rng.random_range(-ml..=ml) } else { 0 };
        // alpha-band rhythm with its own spatial footprint
        let background_freq = rng.random_range(8.0..13.0f64).min(fs / 2.0);
        ShiftSpec {
            mixing,
            gain,
            noise_sigma: self.noise_sigma * rms,
            latency_shift,
            background_amplitude: self.background * rms,
            background_freq,
            background_pattern: random_unit(rng, p),
        }
    }
}

fn matmul(a: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * p];
    for i in 0..p {
        for k in 0..p {
            let x = a[i * p + k];
            for j in 0..p {
                c[i * p + j] += x * b[k * p + j];
            }
        }
    }
    c
}

/// Dense matrix exponential by scaling and squaring with a Taylor core.
fn expm(a: &[f64], p: usize) -> Vec<f64> {
    let norm = a.chunks(p).map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(squarings);
    let a: Vec<f64> = a.iter().map(|x| x * scale).collect();
    let mut out = vec![0.0; p * p];
    let mut term = vec![0.0; p * p];
    for i in 0..p {
        out[i * p + i] = 1.0;
        term[i * p + i] = 1.0;
    }
    for n in 1..=18 {
        term = matmul(&term, &a, p);
        term.iter_mut().for_each(|x| *x /= n as f64);
        out.iter_mut().zip(&term).for_each(|(o, t)| *o += t);
    }
    for _ in 0..squarings {
        out = matmul(&out, &out, p);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochSpec {
    pub n_domains: usize,
    pub families: usize,
    pub variants: usize,
    pub n_channels: usize,
    pub n_times: usize,
    pub sampling_rate: f64,
    /// Signal-to-pink-noise power ratio in dB; `inf` disables the noise.
    pub snr_db: f64,
    pub per_cell: usize,
    pub shift: ShiftPolicy,
    pub seed: u64,
}

impl Default for EpochSpec {
    fn default() -> Self {
        EpochSpec {
            n_domains: 6,
            families: 2,
            variants: 2,
            n_channels: 8,
            n_times: 256,
            sampling_rate: 128.0,
            snr_db: 0.0,
            per_cell: 40,
            shift: ShiftPolicy::moderate(),
            seed: 0,
        }
    }
}

impl EpochSpec {
    pub fn n_classes(&self) -> usize {
        self.families * self.variants
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels < 2 || self.n_times < 64 {
            return Err(Error::Validation(format!("need P >= 2 and T >= 64 (got P={}, T={})", self.n_channels, self.n_times)));
        }
        if self.families == 0 || self.variants == 0 || self.n_classes() < 2 {
            return Err(Error::Validation("class tree needs at least 2 classes".into()));
        }
        if self.n_domains == 0 || self.per_cell == 0 {
            return Err(Error::Validation("need at least one domain and one epoch per cell".into()));
        }
        if !(self.sampling_rate > 0.0) || self.snr_db.is_nan() {
            return Err(Error::Validation("sampling rate must be positive and snr must be a number".into()));
        }
        self.shift.validate()
    }

    /// SHA-256 of the canonical JSON of this spec.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Labeled, domain-tagged epochs stored as `n x P x T` float32, C order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochDataset {
    pub epochs: Vec<f32>,
    pub n_channels: usize,
    pub n_times: usize,
    pub labels: Vec<u32>,
    pub domains: Vec<u32>,
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
    pub sampling_rate: f64,
    pub provenance: String,
}

impl EpochDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn epoch(&self, i: usize) -> &[f32] {
        let sz = self.n_channels * self.n_times;
        &self.epochs[i * sz..(i + 1) * sz]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.domains.len() != n || self.epochs.len() != n * self.n_channels * self.n_times {
            return Err(Error::Validation(format!(
                "inconsistent dataset: {} labels, {} domains, {} samples for P={} T={}",
                n,
                self.domains.len(),
                self.epochs.len(),
                self.n_channels,
                self.n_times
            )));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l as usize >= self.class_names.len()) {
            return Err(Error::Validation(format!("label {l} missing from the class catalog")));
        }
        if let Some(d) = self.domains.iter().find(|&&d| d as usize >= self.domain_names.len()) {
            return Err(Error::Validation(format!("domain {d} missing from the domain catalog")));
        }
        Ok(())
    }

    /// Indices of the epochs whose domain is in `domains`.
    pub fn indices_in(&self, domains: &[u32]) -> Vec<usize> {
        (0..self.len()).filter(|&i| domains.contains(&self.domains[i])).collect()
    }

    pub fn domain_ids(&self) -> Vec<u32> {
        let mut d = self.domains.clone();
        d.sort_unstable();
        d.dedup();
        d
    }
}

/// Unit-variance pink noise (Kellett's filter bank over white noise).
fn pink_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let warmup = 512;
    let mut b = [0.0f64; 7];
    let mut out = Vec::with_capacity(n);
    for i in 0..n + warmup {
        let w: f64 = rng.sample(StandardNormal);
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        let y = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
        b[6] = w * 0.115926;
        if i >= warmup {
            out.push(y);
        }
    }
    let mean = out.iter().sum::<f64>() / n as f64;
    let sd = (out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-12);
    out.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    out
}

/// Noise-free class responses `[class][channel * T + t]` before any shift, at
/// latency offset `lat` samples.
struct Templates {
    patterns: Vec<Vec<f64>>,
    freqs: Vec<f64>,
    phases: Vec<f64>,
    harmonics: Vec<f64>,
}

impl Templates {
    fn new(spec: &EpochSpec) -> Self {
        let mut rng = seeded(derive_seed(spec.seed, 0x7e3d));
        let p = spec.n_channels;
        let fam_patterns: Vec<Vec<f64>> = (0..spec.families).map(|_| random_unit(&mut rng, p)).collect();
        let mut t = Templates { patterns: vec![], freqs: vec![], phases: vec![], harmonics: vec![] };
        for f in 0..spec.families {
            for v in 0..spec.variants {
                let refine = random_unit(&mut rng, p);
                let pat: Vec<f64> = fam_patterns[f].iter().zip(&refine).map(|(a, b)| a + 0.5 * b).collect();
                let n = pat.iter().map(|x| x * x).sum::<f64>().sqrt();
                t.patterns.push(pat.into_iter().map(|x| x / n).collect());
                t.freqs.push(4.0 + 5.0 * f as f64);
                t.phases.push(PI * v as f64 / spec.variants as f64);
                t.harmonics.push(0.6 * v as f64 / spec.variants as f64);
            }
        }
        t
    }

    fn waveform(&self, c: usize, spec: &EpochSpec, lat: i64) -> Vec<f64> {
        let fs = spec.sampling_rate;
        let tn = spec.n_times;
        let center = tn as f64 / 3.0 + lat as f64;
        let width = tn as f64 / 8.0;
        (0..tn)
            .map(|i| {
                let s = i as f64 - lat as f64;
                let env = (-0.5 * ((i as f64 - center) / width).powi(2)).exp();
                let ph = 2.0 * PI * self.freqs[c] * s / fs + self.phases[c];
                env * (ph.sin() + self.harmonics[c] * (2.0 * ph).sin())
            })
            .collect()
    }

    fn clean(&self, c: usize, spec: &EpochSpec, lat: i64) -> Vec<f64> {
        let w = self.waveform(c, spec, lat);
        let mut out = Vec::with_capacity(spec.n_channels * spec.n_times);
        for &a in &self.patterns[c] {
            out.extend(w.iter().map(|x| a * x));
        }
        out
    }
}

/// Noise-free, unshifted class templates `[class][P * T]` as generated.
pub fn class_templates(spec: &EpochSpec) -> Vec<Vec<f64>> {
    let t = Templates::new(spec);
    (0..spec.n_classes()).map(|c| t.clean(c, spec, 0)).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Per-domain shifts drawn from the policy, one independent stream per domain.
pub fn domain_shifts(spec: &EpochSpec) -> Vec<ShiftSpec> {
    let clean = class_templates(spec);
    let r = clean.iter().map(|c| rms(c)).sum::<f64>() / clean.len() as f64;
    (0..spec.n_domains)
        .map(|d| spec.shift.draw(&mut seeded(derive_seed(spec.seed, 0x5417 + d as u64)), spec.n_channels, spec.sampling_rate, r))
        .collect()
}

/// Generates the full dataset: `per_cell` epochs for every (domain, class),
/// ordered by domain, then class.
///
/// Each epoch is `gain * M (A_c s_c + background + pink) + white`, where `A_c
/// s_c` is the class response delayed by the domain latency, the pink noise is
/// scaled to the requested SNR against the mean clean-signal power, and `M` is
/// the domain mixing.
pub fn gen_epochs(spec: &EpochSpec) -> Result<EpochDataset> {
    spec.validate()?;
    let (p, tn) = (spec.n_channels, spec.n_times);
    let templates = Templates::new(spec);
    let shifts = domain_shifts(spec);
    let clean0: Vec<Vec<f64>> = (0..spec.n_classes()).map(|c| templates.clean(c, spec, 0)).collect();
    let signal_rms = clean0.iter().map(|c| rms(c)).sum::<f64>() / clean0.len() as f64;
    let noise_scale = if spec.snr_db.is_infinite() && spec.snr_db > 0.0 { 0.0 } else { signal_rms / 10f64.powf(spec.snr_db / 20.0) };
    let fs = spec.sampling_rate;

    let n = spec.n_domains * spec.n_classes() * spec.per_cell;
    let mut epochs = Vec::with_capacity(n * p * tn);
    let mut labels = Vec::with_capacity(n);
    let mut domains = Vec::with_capacity(n);
    for (d, sh) in shifts.iter().enumerate() {
        let mut rng = seeded(derive_seed(spec.seed, 0x9a1 + d as u64));
        let white = Normal::new(0.0, sh.noise_sigma.max(0.0)).expect("finite sigma");
        let clean: Vec<Vec<f64>> = (0..spec.n_classes()).map(|c| templates.clean(c, spec, sh.latency_shift)).collect();
        for (c, cl) in clean.iter().enumerate() {
            for _ in 0..spec.per_cell {
                let bg_phase = rng.random_range(0.0..2.0 * PI);
                let mut src = cl.clone();
                for ch in 0..p {
                    let noise = if noise_scale > 0.0 { pink_noise(&mut rng, tn) } else { vec![0.0; tn] };
                    let a = sh.background_amplitude * sh.background_pattern[ch];
                    for t in 0..tn {
                        let bg = a * (2.0 * PI * sh.background_freq * t as f64 / fs + bg_phase).sin();
                        src[ch * tn + t] += bg + noise_scale * noise[t];
                    }
                }
                for i in 0..p {
                    let row = &sh.mixing[i * p..(i + 1) * p];
                    for t in 0..tn {
                        let mut acc = 0.0;
                        for (j, m) in row.iter().enumerate() {
                            acc += m * src[j * tn + t];
                        }
                        let w = if sh.noise_sigma > 0.0 { white.sample(&mut rng) } else { 0.0 };
                        epochs.push((sh.gain * acc + w) as f32);
                    }
                }
                labels.push(c as u32);
                domains.push(d as u32);
            }
        }
    }
    let class_names = (0..spec.families)
        .flat_map(|f| (0..spec.variants).map(move |v| format!("family{f}_variant{v}")))
        .collect();
    let domain_names = (0..spec.n_domains).map(|d| format!("domain{d}")).collect();
    let ds = EpochDataset {
        epochs,
        n_channels: p,
        n_times: tn,
        labels,
        domains,
        class_names,
        domain_names,
        sampling_rate: fs,
        provenance: spec.config_hash(),
    };
    ds.validate()?;
    Ok(ds)
}
