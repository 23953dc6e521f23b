//! Finite-difference checks of every differentiable layer.
//!
//! Each case maps seeded inputs to an array; the checked scalar is its
//! contraction with a fixed random weight array. Analytic gradients from the
//! tape are compared with central differences for every input, and the
//! largest error over seeds, relative to the case's largest gradient entry,
//! is reported per layer.

use ndarray::IxDyn;
use rand::Rng;
use serde::Serialize;

use crate::alignment::{hbn_rows, hhsw_loss, HhswConfig, NormMode, ReferenceKind, HBN_EPS};
use crate::autodiff::{numeric_gradient, Array, Conv2d, Tape, Var};
use crate::error::Result;
use crate::frechet::frechet_mean;
use crate::layers::lorentz::rows_to_points;
use crate::layers::{
    batch_norm, centroid, hcat, hmlr, lfc, lift, lorentz_avg_pool, lorentz_conv, lorentz_elu, proj_x, Activation, BnState, LfcMode,
    LfcVars,
};
use crate::manifold::Curvature;
use crate::model::{loss_on_tape, ForwardMode, HeegnetModel, ModelConfig};
use crate::rng::{derive_seed, seeded, Rng as Rng64};
use crate::synth::{gen_epochs, EpochSpec, ShiftPolicy};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;
// the error is relative to the largest gradient entry of the whole case,
// or to this floor when every entry is smaller
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub seeds: u64,
    pub tolerance: f64,
    /// Adds a fixture layer whose backward rule has its sign flipped; it must fail.
    pub inject_sign_flip: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { seeds: 3, tolerance: DEFAULT_TOLERANCE, inject_sign_flip: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCheck {
    pub layer: String,
    pub seeds: u64,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub layers: Vec<LayerCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,seeds,max_rel_err,status\n");
        for l in &self.layers {
            s += &format!("{},{},{:e},{}\n", l.layer, l.seeds, l.max_rel_err, if l.pass { "PASS" } else { "FAIL" });
        }
        s
    }

    pub fn table(&self) -> String {
        let w = self.layers.iter().map(|l| l.layer.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<w$}  {:>5}  {:>11}  status\n", "layer", "seeds", "max rel err");
        for l in &self.layers {
            s += &format!("{:<w$}  {:>5}  {:>11.3e}  {}\n", l.layer, l.seeds, l.max_rel_err, if l.pass { "PASS" } else { "FAIL" });
        }
        s += &format!("tolerance {:e}: {}\n", self.tolerance, if self.passed() { "all PASS" } else { "FAILURES" });
        s
    }
}

type Build = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

struct Case {
    name: &'static str,
    inputs: Box<dyn Fn(&mut Rng64) -> Vec<Array>>,
    build: Build,
}

fn uniform(rng: &mut Rng64, shape: &[usize], lo: f64, hi: f64) -> Array {
    Array::from_shape_simple_fn(IxDyn(shape), || rng.random_range(lo..hi))
}

fn k1() -> Curvature {
    Curvature::new(-1.0).unwrap()
}

fn lfc_vars<'t>(v: &[Var<'t>]) -> LfcVars<'t> {
    LfcVars { w: v[0], b: v[1], log_lambda: v[2], v: v[3], b_prime: v[4] }
}

fn lfc_inputs(rng: &mut Rng64, n: usize, m: usize) -> Vec<Array> {
    vec![
        uniform(rng, &[m, n + 1], -0.5, 0.5),
        uniform(rng, &[m], -0.2, 0.2),
        Array::from_elem(IxDyn(&[1]), rng.random_range(0.5..1.5)),
        uniform(rng, &[n + 1], -0.5, 0.5),
        uniform(rng, &[1], -0.2, 0.2),
    ]
}

/// Seeded tiny model and batch for the composite check: two domains with one
/// epoch per class each, four channels, 64 samples, eight slices.
fn composite_setup(seed: u64) -> Result<(HeegnetModel, Array, Vec<usize>, Vec<u32>)> {
    let spec = EpochSpec {
        n_domains: 2,
        n_channels: 4,
        n_times: 64,
        per_cell: 1,
        shift: ShiftPolicy::moderate(),
        seed,
        ..EpochSpec::default()
    };
    let ds = gen_epochs(&spec)?;
    let cfg = ModelConfig {
        n_channels: 4,
        n_times: 64,
        n_classes: 4,
        temporal_kernel: 16,
        depth_kernel: 8,
        hhsw_slices: 8,
        seed,
        ..ModelConfig::default()
    };
    let mut m = HeegnetModel::new(cfg)?;
    let idx: Vec<usize> = (0..ds.len()).collect();
    let x = m.batch_input(&ds, &idx)?;
    let labels: Vec<usize> = ds.labels.iter().map(|&l| l as usize).collect();
    let domains = ds.domains.clone();
    // one training pass creates the per-domain statistics that the check then holds fixed
    let tape = Tape::new();
    let v = m.params.vars(&tape, false);
    loss_on_tape(&mut m, tape.constant(x.clone()), &v, &labels, &domains, ForwardMode::TRAIN, &mut seeded(1), &mut seeded(2))?;
    Ok((m, x, labels, domains))
}

/// HBN with the Fréchet statistics of the seed's base batch held fixed.
fn hbn_case(seed: u64) -> Result<Case> {
    let k = k1();
    let mut rng = seeded(seed);
    let space = uniform(&mut rng, &[6, 4], -1.0, 1.0);
    let log_gamma = Array::from_elem(IxDyn(&[1]), rng.random_range(-0.5..0.5));
    let tape = Tape::new();
    let pts = rows_to_points(&lift(tape.constant(space.clone()), k).value(), k);
    let fm = frechet_mean(&pts)?;
    let d = pts[0].ambient().len();
    let means = Array::from_shape_fn(IxDyn(&[pts.len(), d]), |i| fm.mean.ambient()[i[1]]);
    let vars = Array::from_elem(IxDyn(&[pts.len(), 1]), fm.variance);
    Ok(Case {
        name: "hbn",
        inputs: Box::new(move |_| vec![space.clone(), log_gamma.clone()]),
        build: Box::new(move |_, v| Ok(hbn_rows(lift(v[0], k), &means, &vars, v[1], HBN_EPS, k))),
    })
}

fn composite_case(seed: u64) -> Result<Case> {
    let (model, x, labels, domains) = composite_setup(seed)?;
    let params: Vec<Array> = model.params.named().into_iter().map(|(_, a)| a.clone()).collect();
    let mode = ForwardMode { training: true, norm: NormMode::Eval };
    Ok(Case {
        name: "composite loss",
        inputs: Box::new(move |_| params.clone()),
        build: Box::new(move |tape, v| {
            let mut m = model.clone();
            let xv = tape.constant(x.clone());
            let (loss, _) = loss_on_tape(&mut m, xv, v, &labels, &domains, mode, &mut seeded(11), &mut seeded(12))?;
            Ok(loss)
        }),
    })
}

fn cases() -> Vec<Case> {
    let k = k1();
    let mut v: Vec<Case> = vec![
        Case {
            name: "conv2d temporal",
            inputs: Box::new(|r| vec![uniform(r, &[2, 1, 4, 24], -1.0, 1.0), uniform(r, &[4, 1, 1, 8], -0.5, 0.5)]),
            build: Box::new(|_, v| Ok(v[0].conv2d(v[1], Conv2d { padding: (0, 0, 3, 4), ..Conv2d::default() }))),
        },
        Case {
            name: "conv2d depthwise",
            inputs: Box::new(|r| vec![uniform(r, &[2, 4, 4, 12], -1.0, 1.0), uniform(r, &[8, 1, 4, 1], -0.5, 0.5)]),
            build: Box::new(|_, v| Ok(v[0].conv2d(v[1], Conv2d { groups: 4, ..Conv2d::default() }))),
        },
        Case {
            name: "conv2d strided",
            inputs: Box::new(|r| vec![uniform(r, &[2, 2, 5, 9], -1.0, 1.0), uniform(r, &[4, 1, 2, 3], -0.5, 0.5)]),
            build: Box::new(|_, v| Ok(v[0].conv2d(v[1], Conv2d { stride: (2, 2), padding: (1, 0, 1, 1), groups: 2 }))),
        },
        Case {
            name: "batch norm (train)",
            inputs: Box::new(|r| vec![uniform(r, &[4, 3, 2, 5], -2.0, 3.0), uniform(r, &[3], 0.5, 1.5), uniform(r, &[3], -0.5, 0.5)]),
            build: Box::new(|_, v| Ok(batch_norm(v[0], v[1], v[2], &mut BnState::new(3), true))),
        },
        Case {
            name: "batch norm (eval)",
            inputs: Box::new(|r| vec![uniform(r, &[4, 3, 2, 5], -2.0, 3.0), uniform(r, &[3], 0.5, 1.5), uniform(r, &[3], -0.5, 0.5)]),
            build: Box::new(|_, v| {
                let mut st = BnState::new(3);
                st.running_mean = vec![0.3, -0.2, 0.1];
                st.running_var = vec![1.5, 0.7, 2.0];
                Ok(batch_norm(v[0], v[1], v[2], &mut st, false))
            }),
        },
        Case {
            name: "lift",
            inputs: Box::new(|r| vec![uniform(r, &[6, 5], -2.0, 2.0)]),
            build: Box::new(move |_, v| Ok(lift(v[0], k))),
        },
        Case {
            name: "proj_x (clamped rows)",
            // row norms sit well away from the clamp radius
            inputs: Box::new(|r| {
                let mut a = uniform(r, &[6, 5], -1.0, 1.0);
                for (i, mut row) in a.outer_iter_mut().enumerate() {
                    let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let target = if i % 2 == 0 { 1.0 } else { 5.0 };
                    row.mapv_inplace(|x| x * target / n);
                }
                vec![a]
            }),
            build: Box::new(move |_, v| Ok(proj_x(v[0], 3.0, k))),
        },
        Case {
            name: "lorentz elu",
            inputs: Box::new(|r| vec![uniform(r, &[6, 5], -2.0, 2.0)]),
            build: Box::new(move |_, v| Ok(lorentz_elu(lift(v[0], k), k))),
        },
        Case {
            name: "lorentz concat",
            inputs: Box::new(|r| vec![uniform(r, &[3, 4, 3], -1.5, 1.5)]),
            build: Box::new(move |_, v| Ok(hcat(lift(v[0], k), k))),
        },
        Case {
            name: "lorentz centroid",
            inputs: Box::new(|r| vec![uniform(r, &[3, 4, 3], -1.5, 1.5)]),
            build: Box::new(move |_, v| Ok(centroid(lift(v[0], k), k))),
        },
        Case {
            name: "lorentz avg pool",
            inputs: Box::new(|r| vec![uniform(r, &[2, 1, 6, 3], -1.5, 1.5)]),
            build: Box::new(move |_, v| lorentz_avg_pool(lift(v[0], k), 1, 2, (1, 2), k)),
        },
        Case {
            name: "lfc gated",
            inputs: Box::new(|r| [vec![uniform(r, &[5, 4], -1.5, 1.5)], lfc_inputs(r, 4, 3)].concat()),
            build: Box::new(move |_, v| Ok(lfc(lift(v[0], k), &lfc_vars(&v[1..]), Activation::Elu, LfcMode::Gated, k))),
        },
        Case {
            name: "lfc ungated",
            inputs: Box::new(|r| [vec![uniform(r, &[5, 4], -1.5, 1.5)], lfc_inputs(r, 4, 3)].concat()),
            build: Box::new(move |_, v| Ok(lfc(lift(v[0], k), &lfc_vars(&v[1..]), Activation::Identity, LfcMode::Ungated, k))),
        },
        Case {
            name: "lorentz conv 1x2",
            inputs: Box::new(|r| [vec![uniform(r, &[2, 1, 4, 3], -1.5, 1.5)], lfc_inputs(r, 6, 3)].concat()),
            build: Box::new(move |_, v| lorentz_conv(lift(v[0], k), 1, 2, (1, 2), &lfc_vars(&v[1..]), Activation::Identity, LfcMode::Gated, k)),
        },
        Case {
            name: "hmlr",
            inputs: Box::new(|r| vec![uniform(r, &[5, 4], -1.5, 1.5), uniform(r, &[3], -0.5, 0.5), uniform(r, &[3, 4], -1.0, 1.0)]),
            build: Box::new(move |_, v| Ok(hmlr(lift(v[0], k), v[1], v[2], k))),
        },
        Case {
            name: "hhsw loss",
            inputs: Box::new(|r| vec![uniform(r, &[8, 4], -1.0, 1.0)]),
            build: Box::new(move |_, v| {
                let cfg = HhswConfig { slices: 8, exponent: 2.0, reference: ReferenceKind::UnitSphere };
                hhsw_loss(lift(v[0], k), &[0, 0, 0, 0, 1, 1, 1, 1], &cfg, &mut seeded(5), k)
            }),
        },
    ];
    v.shrink_to_fit();
    v
}

fn sign_flip_fixture() -> Case {
    Case {
        name: "fixture: sign-flipped elu",
        inputs: Box::new(|r| vec![uniform(r, &[4, 3], -2.0, 2.0)]),
        build: Box::new(|_, v| {
            let elu = |x: f64| if x > 0.0 { x } else { x.exp_m1() };
            Ok(v[0].unary(elu, |x, _| -(if x > 0.0 { 1.0 } else { x.exp() })))
        }),
    }
}

/// Largest absolute gradient error over all inputs of one case at one seed,
/// relative to the largest numeric gradient entry across those inputs.
fn check_case(case: &Case, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let inputs = (case.inputs)(&mut rng);
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = (case.build)(&tape, &vars)?;
    let weights = uniform(&mut rng, &out.shape(), -1.0, 1.0);
    let loss = (out * tape.constant(weights.clone())).sum();
    tape.backward(loss)?;
    let eval = |which: usize, x: &Array| -> f64 {
        let t = Tape::new();
        let vs: Vec<Var> = inputs.iter().enumerate().map(|(i, a)| t.constant(if i == which { x.clone() } else { a.clone() })).collect();
        let y = (case.build)(&t, &vs).expect("forward succeeded once");
        (&*y.value() * &weights).sum()
    };
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (i, a) in inputs.iter().enumerate() {
        let numeric = numeric_gradient(|x| eval(i, x), a, STEP);
        let analytic = tape.grad(vars[i]).unwrap_or_else(|| Array::zeros(a.raw_dim()));
        if analytic.iter().chain(&numeric).any(|v| !v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        diff = analytic.iter().zip(&numeric).fold(diff, |m, (a, n)| m.max((a - n).abs()));
        scale = numeric.iter().fold(scale, |m, v| m.max(v.abs()));
    }
    Ok(diff / scale.max(FLOOR))
}

fn run_case(case: &Case, seeds: &[u64], tol: f64) -> Result<LayerCheck> {
    let mut worst: f64 = 0.0;
    for &s in seeds {
        worst = worst.max(check_case(case, s)?);
    }
    Ok(LayerCheck { layer: case.name.to_string(), seeds: seeds.len() as u64, max_rel_err: worst, pass: worst < tol })
}

pub fn run_gradcheck(cfg: &GradcheckConfig, seed: u64) -> Result<GradcheckReport> {
    let seeds: Vec<u64> = (0..cfg.seeds.max(1)).map(|i| derive_seed(seed, i)).collect();
    let mut layers = cases().iter().map(|c| run_case(c, &seeds, cfg.tolerance)).collect::<Result<Vec<_>>>()?;
    // these carry state computed from the seed's base inputs, so they are built per seed
    let per_seed: [(&str, fn(u64) -> Result<Case>); 2] = [("hbn", hbn_case), ("composite loss", composite_case)];
    for (name, make) in per_seed {
        let mut worst: f64 = 0.0;
        for &s in &seeds {
            worst = worst.max(check_case(&make(s)?, s)?);
        }
        layers.push(LayerCheck { layer: name.into(), seeds: seeds.len() as u64, max_rel_err: worst, pass: worst < cfg.tolerance });
    }
    if cfg.inject_sign_flip {
        layers.push(run_case(&sign_flip_fixture(), &seeds, cfg.tolerance)?);
    }
    Ok(GradcheckReport { tolerance: cfg.tolerance, layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes() {
        let r = run_gradcheck(&GradcheckConfig::default(), 0).unwrap();
        assert!(r.passed(), "\n{}", r.table());
        assert!(r.layers.len() >= 17);
        assert!(r.layers.iter().all(|l| l.seeds == 3));
    }

    #[test]
    fn sign_flip_is_detected() {
        let r = run_gradcheck(&GradcheckConfig { seeds: 1, inject_sign_flip: true, ..GradcheckConfig::default() }, 0).unwrap();
        assert!(!r.passed());
        let bad: Vec<&str> = r.layers.iter().filter(|l| !l.pass).map(|l| l.layer.as_str()).collect();
        assert_eq!(bad, vec!["fixture: sign-flipped elu"]);
        assert!(r.table().contains("FAIL"));
        assert!(r.to_csv().lines().count() == r.layers.len() + 1);
    }
}
