//! Finite-difference suite over every differentiable tape op (three shapes
//! each) and the composite networks, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discriminator::{DiscriminatorConfig, MultiScaleDiscriminator};
use crate::error::Result;
use crate::generator::{is_g1_param, CoarseToFineGenerator, GeneratorConfig};
use crate::loss::{total_generator_loss, unzip_scales, LossWeights};
use crate::tensor::gradcheck::{GradCheck, GradCheckResult};
use crate::tensor::{ParamStore, ParamVars, Tape, Tensor, Var};

pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub result: GradCheckResult,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.result.max_rel_err < TOLERANCE
    }
}

// Uniform in ±[0.1, 1], keeping leaves away from the kinks of relu and l1.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m: f64 = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

// Scalar readout of a tensor op against a fixed random target.
fn readout(tape: &mut Tape<f64>, y: Var, target: &Tensor<f64>) -> Result<Var> {
    let t = tape.constant(target.clone());
    tape.mse_loss(y, t)
}

struct Suite {
    check: GradCheck,
    rng: ChaCha8Rng,
    out: Vec<SuiteEntry>,
}

impl Suite {
    fn run<F>(&mut self, name: String, inputs: Vec<Tensor<f64>>, f: F) -> Result<()>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let result = self.check.run(&inputs, f)?;
        self.out.push(SuiteEntry { name, result });
        Ok(())
    }

    // Unary tensor op followed by an mse readout.
    fn unary<F>(&mut self, name: &str, shapes: &[&[usize]], op: F) -> Result<()>
    where
        F: Fn(&mut Tape<f64>, Var) -> Result<Var> + Copy,
    {
        for shape in shapes {
            let x = away_from_zero(shape, &mut self.rng);
            let probe = {
                let mut t = Tape::new();
                let v = t.constant(x.clone());
                let y = op(&mut t, v)?;
                t.value(y).shape().to_vec()
            };
            let target = uniform(&probe, &mut self.rng);
            self.run(format!("{name} {shape:?}"), vec![x], move |tape, v| {
                let y = op(tape, v[0])?;
                readout(tape, y, &target)
            })?;
        }
        Ok(())
    }
}

const SHAPES: [&[usize]; 3] = [&[1, 1, 4, 4], &[2, 3, 5, 6], &[1, 4, 8, 8]];

fn op_checks(s: &mut Suite) -> Result<()> {
    // conv2d: (x, weight, stride, pad)
    let convs: [([usize; 4], [usize; 4], usize, usize); 3] =
        [([1, 1, 5, 5], [2, 1, 3, 3], 1, 1), ([2, 3, 7, 6], [4, 3, 3, 3], 2, 1), ([1, 2, 9, 9], [3, 2, 4, 4], 2, 2)];
    for (xs, ws, stride, pad) in convs {
        let x = uniform(&xs, &mut s.rng);
        let w = uniform(&ws, &mut s.rng);
        let b = uniform(&[ws[0]], &mut s.rng);
        let y = crate::tensor::ops::conv2d(&x, &w, Some(&b), stride, pad)?;
        let target = uniform(y.shape(), &mut s.rng);
        s.run(format!("conv2d x{xs:?} w{ws:?} s{stride} p{pad}"), vec![x, w, b], move |tape, v| {
            let y = tape.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            readout(tape, y, &target)
        })?;
    }
    // conv_transpose2d: weight is [cin, cout, k, k]
    let convts: [([usize; 4], [usize; 4], usize, usize); 3] =
        [([1, 1, 3, 3], [1, 2, 3, 3], 1, 1), ([2, 3, 4, 5], [3, 2, 4, 4], 2, 1), ([1, 4, 3, 3], [4, 3, 3, 3], 2, 0)];
    for (xs, ws, stride, pad) in convts {
        let x = uniform(&xs, &mut s.rng);
        let w = uniform(&ws, &mut s.rng);
        let b = uniform(&[ws[1]], &mut s.rng);
        let y = crate::tensor::ops::conv_transpose2d(&x, &w, Some(&b), stride, pad)?;
        let target = uniform(y.shape(), &mut s.rng);
        s.run(format!("conv_transpose2d x{xs:?} w{ws:?} s{stride} p{pad}"), vec![x, w, b], move |tape, v| {
            let y = tape.conv_transpose2d(v[0], v[1], Some(v[2]), stride, pad)?;
            readout(tape, y, &target)
        })?;
    }
    s.unary("instance_norm", &SHAPES, |t, x| t.instance_norm(x, 1e-5))?;
    s.unary("leaky_relu", &SHAPES, |t, x| Ok(t.leaky_relu(x, 0.2)))?;
    s.unary("relu", &SHAPES, |t, x| Ok(t.relu(x)))?;
    s.unary("tanh", &SHAPES, |t, x| Ok(t.tanh(x)))?;
    s.unary("scale", &SHAPES, |t, x| Ok(t.scale(x, -1.7)))?;
    s.unary("avg_downsample2", &[&[1, 1, 4, 4], &[2, 3, 6, 8], &[1, 2, 4, 10]], |t, x| t.avg_downsample2(x))?;

    for shape in SHAPES {
        let x = away_from_zero(shape, &mut s.rng);
        s.run(format!("sum {shape:?}"), vec![x], |tape, v| Ok(tape.sum(v[0])))?;
    }
    for shape in SHAPES {
        let x = away_from_zero(shape, &mut s.rng);
        s.run(format!("mse_to {shape:?}"), vec![x], |tape, v| Ok(tape.mse_to(v[0], 0.3)))?;
    }
    for shape in SHAPES {
        let (a, b) = (uniform(shape, &mut s.rng), uniform(shape, &mut s.rng));
        s.run(format!("mse_loss {shape:?}"), vec![a, b], |tape, v| tape.mse_loss(v[0], v[1]))?;
    }
    for shape in SHAPES {
        // keep a − b clear of zero
        let a = uniform(shape, &mut s.rng);
        let gap = away_from_zero(shape, &mut s.rng);
        let b = Tensor::new(shape.to_vec(), a.data().iter().zip(gap.data()).map(|(x, g)| x + g).collect())?;
        s.run(format!("l1_loss {shape:?}"), vec![a, b], |tape, v| tape.l1_loss(v[0], v[1]))?;
    }
    for shape in SHAPES {
        let (a, b) = (uniform(shape, &mut s.rng), uniform(shape, &mut s.rng));
        let target = uniform(shape, &mut s.rng);
        s.run(format!("add {shape:?}"), vec![a, b], move |tape, v| {
            let y = tape.add(v[0], v[1])?;
            readout(tape, y, &target)
        })?;
    }
    for shape in SHAPES {
        let parts: Vec<_> = (0..3).map(|_| uniform(shape, &mut s.rng)).collect();
        let target = uniform(shape, &mut s.rng);
        s.run(format!("add_all {shape:?}"), parts, move |tape, v| {
            let y = tape.add_all(v)?;
            readout(tape, y, &target)
        })?;
    }
    for (ca, cb, h) in [(1, 1, 3), (1, 3, 4), (2, 2, 5)] {
        let a = uniform(&[2, ca, h, h], &mut s.rng);
        let b = uniform(&[2, cb, h, h], &mut s.rng);
        let target = uniform(&[2, ca + cb, h, h], &mut s.rng);
        s.run(format!("concat_channels {ca}+{cb} {h}x{h}"), vec![a, b], move |tape, v| {
            let y = tape.concat_channels(v[0], v[1])?;
            readout(tape, y, &target)
        })?;
    }
    Ok(())
}

fn small_generator() -> Result<(CoarseToFineGenerator, ParamStore<f64>)> {
    let cfg = GeneratorConfig { base_width: 4, g1_res_blocks: 1, g2_res_blocks: 1, full_resolution: 32, ..Default::default() };
    let mut store = ParamStore::new();
    let gen = CoarseToFineGenerator::new(cfg, &mut store, 11)?;
    Ok((gen, store.cast()))
}

// Weights pushed well away from the tiny init so nonlinearities are exercised.
fn amplified(store: &ParamStore<f64>, keep: impl Fn(&str) -> bool) -> Vec<Tensor<f64>> {
    store.iter().filter(|(_, n, _)| keep(n)).map(|(_, _, t)| t.map(|v| v * 5.0)).collect()
}

// Params listed in store order: the ones in `checked` come from the
// gradient-checked leaves, the rest are constants.
fn param_vars(tape: &mut Tape<f64>, store: &ParamStore<f64>, checked: &[Var], keep: impl Fn(&str) -> bool) -> ParamVars {
    let mut it = checked.iter();
    let vars = store
        .iter()
        .map(|(_, n, t)| if keep(n) { *it.next().expect("one leaf per kept param") } else { tape.constant(t.map(|v| v * 5.0)) })
        .collect();
    ParamVars::from_vars(vars)
}

fn network_checks(s: &mut Suite) -> Result<()> {
    let (gen, gstore) = small_generator()?;

    let mut inputs = amplified(&gstore, is_g1_param);
    let n_g1 = inputs.len();
    inputs.push(uniform(&[1, 1, 16, 16], &mut s.rng));
    let target = uniform(&[1, 3, 16, 16], &mut s.rng);
    s.run("network g1".into(), inputs, |tape, v| {
        let p = param_vars(tape, &gstore, &v[..n_g1], is_g1_param);
        let (img, _) = gen.forward_g1(tape, &p, v[n_g1])?;
        readout(tape, img, &target)
    })?;

    let mut inputs = amplified(&gstore, |_| true);
    let n_g = inputs.len();
    inputs.push(uniform(&[1, 1, 32, 32], &mut s.rng));
    let target = uniform(&[1, 3, 32, 32], &mut s.rng);
    s.run("network generator".into(), inputs, |tape, v| {
        let p = param_vars(tape, &gstore, &v[..n_g], |_| true);
        let img = gen.forward_full(tape, &p, v[n_g])?;
        readout(tape, img, &target)
    })?;

    let mut dstore32 = ParamStore::new();
    let disc = MultiScaleDiscriminator::new(DiscriminatorConfig { base_width: 4, ..Default::default() }, &mut dstore32, 12)?;
    let dstore: ParamStore<f64> = dstore32.cast();
    let is_d1 = |n: &str| n.starts_with("d1.");
    let mut inputs = amplified(&dstore, is_d1);
    let n_d = inputs.len();
    inputs.push(uniform(&[1, 1, 16, 16], &mut s.rng));
    inputs.push(uniform(&[1, 3, 16, 16], &mut s.rng));
    s.run("network discriminator scale 1".into(), inputs, |tape, v| {
        let p = param_vars(tape, &dstore, &v[..n_d], is_d1);
        let out = disc.forward_scale(tape, &p, 1, v[n_d], v[n_d + 1])?;
        let mut terms = vec![tape.mse_to(out.logits, 1.0)];
        for &f in &out.features {
            terms.push(tape.mse_to(f, 0.5));
        }
        tape.add_all(&terms)
    })?;

    // Generator objective as a function of the generated image; the
    // discriminators and the real pair are fixed.
    let sar = uniform(&[1, 1, 16, 16], &mut s.rng);
    let real = uniform(&[1, 3, 16, 16], &mut s.rng);
    let fake = uniform(&[1, 3, 16, 16], &mut s.rng);
    s.run("loss total generator".into(), vec![fake], |tape, v| {
        let p = param_vars(tape, &dstore, &[], |_| false);
        let sar = tape.constant(sar.clone());
        let real = tape.constant(real.clone());
        let (_, real_feats) = unzip_scales(&disc.forward_all(tape, &p, sar, real)?);
        let (fake_logits, fake_feats) = unzip_scales(&disc.forward_all(tape, &p, sar, v[0])?);
        total_generator_loss(tape, &fake_logits, &real_feats, &fake_feats, &LossWeights::default())
    })?;
    Ok(())
}

/// Runs the whole suite. Entries are in a fixed order and the sampled
/// coordinates depend only on `seed`.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut s = Suite {
        check: GradCheck { seed, ..Default::default() },
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: Vec::new(),
    };
    op_checks(&mut s)?;
    network_checks(&mut s)?;
    Ok(s.out)
}
