//! Central finite-difference checks of the reverse pass, run in `f64`.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Perturbation used for the central differences.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared in absolute terms.
pub const DEFAULT_FLOOR: f64 = 1e-4;
/// Coordinates sampled per differentiable input.
pub const DEFAULT_SAMPLES: usize = 24;
/// Default tolerance on the maximum relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// `(f(+h) − f(−h)) / 2h`.
pub fn central_difference(h: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let plus = f(h)?;
    let minus = f(-h)?;
    Ok((plus - minus) / (2.0 * h))
}

/// Outcome of one finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub samples: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<18} samples={:<4} max_rel_error={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.samples,
            self.max_rel_error,
            self.tolerance
        )
    }
}

/// Options for [`check_op`].
#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub step: f64,
    pub floor: f64,
    pub samples: usize,
    pub tolerance: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            step: DEFAULT_STEP,
            floor: DEFAULT_FLOOR,
            samples: DEFAULT_SAMPLES,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Checks the gradient of `build` (which must return a scalar) with respect
/// to each of `inputs` at randomly sampled coordinates.
pub fn check_op<R: Rng>(
    name: &str,
    inputs: &[Tensor<f64>],
    opts: CheckOptions,
    rng: &mut R,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<CheckResult> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |which: usize, idx: usize, delta: f64| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if i == which {
                    t.data_mut()[idx] += delta;
                }
                tape.constant(t)
            })
            .collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut worst = 0.0f64;
    let mut count = 0;
    for (which, input) in inputs.iter().enumerate() {
        let n = input.numel();
        if n == 0 {
            continue;
        }
        let analytic = grads.get_or_zeros(vars[which], input);
        for idx in sample(rng, n, opts.samples.min(n)) {
            let numeric = central_difference(opts.step, |d| eval(which, idx, d))?;
            let err = relative_error(analytic.data()[idx], numeric, opts.floor);
            worst = if err.is_nan() { f64::NAN } else { worst.max(err) };
            count += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        samples: count,
        max_rel_error: worst,
        tolerance: opts.tolerance,
    })
}

fn uniform<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform values in `[-1, 1]` whose magnitudes are at least `margin`.
fn away_from_zero<R: Rng>(rng: &mut R, shape: &[usize], margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(margin..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Values whose pairwise gaps are all at least `gap`.
fn distinct<R: Rng>(rng: &mut R, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| i as f64 * gap).collect();
    for i in (1..n).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), levels).expect("shape matches")
}

/// Reduces an op output to a scalar with fixed random weights.
fn project<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape, -1.0, 1.0)
}

/// Runs the finite-difference check of every differentiable operation.
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let opts = CheckOptions::default();
    let strict = CheckOptions {
        tolerance: 1e-5,
        ..opts
    };
    let mut out = Vec::new();

    {
        let x = uniform(rng, &[2, 3, 6, 6], -1.0, 1.0);
        let w = uniform(rng, &[4, 3, 3, 3], -0.5, 0.5);
        let b = uniform(rng, &[4], -0.5, 0.5);
        let p = project(rng, &[2, 4, 6, 6]);
        out.push(check_op("conv2d", &[x, w, b], opts, rng, |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            t.weighted_sum(y, p.clone())
        })?);
    }
    {
        let x = uniform(rng, &[1, 2, 7, 7], -1.0, 1.0);
        let w = uniform(rng, &[3, 2, 3, 3], -0.5, 0.5);
        let b = uniform(rng, &[3], -0.5, 0.5);
        let p = project(rng, &[1, 3, 3, 3]);
        out.push(check_op("conv2d_stride2", &[x, w, b], opts, rng, |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 2, 0)?;
            t.weighted_sum(y, p.clone())
        })?);
    }
    {
        let x = away_from_zero(rng, &[2, 3, 5, 5], 1e-3);
        let p = project(rng, &[2, 3, 5, 5]);
        out.push(check_op("relu", &[x], strict, rng, |t, v| {
            let y = t.relu(v[0]);
            t.weighted_sum(y, p.clone())
        })?);
    }
    {
        let x = distinct(rng, &[2, 2, 6, 6], 1e-3);
        let p = project(rng, &[2, 2, 3, 3]);
        out.push(check_op("maxpool2", &[x], strict, rng, |t, v| {
            let y = t.maxpool2(v[0])?;
            t.weighted_sum(y, p.clone())
        })?);
    }
    {
        let x = uniform(rng, &[2, 2, 4, 4], -1.0, 1.0);
        let p = project(rng, &[2, 2, 8, 8]);
        out.push(check_op("upsample2", &[x], strict, rng, |t, v| {
            let y = t.upsample2(v[0])?;
            t.weighted_sum(y, p.clone())
        })?);
    }
    {
        let a = uniform(rng, &[2, 3, 4, 4], -1.0, 1.0);
        let b = uniform(rng, &[2, 2, 4, 4], -1.0, 1.0);
        let p = project(rng, &[2, 5, 4, 4]);
        out.push(check_op("concat_channels", &[a, b], opts, rng, |t, v| {
            let y = t.concat_channels(v[0], v[1])?;
            t.weighted_sum(y, p.clone())
        })?);
    }
    {
        let a = uniform(rng, &[2, 4, 4, 4], -1.0, 1.0);
        let b = uniform(rng, &[2, 4, 4, 4], -1.0, 1.0);
        let p = project(rng, &[2, 1, 4, 4]);
        out.push(check_op("cosine_channels", &[a, b], opts, rng, |t, v| {
            let y = t.cosine_channels(v[0], v[1], 1e-8)?;
            t.weighted_sum(y, p.clone())
        })?);
    }
    {
        let m = uniform(rng, &[2, 1, 4, 4], 0.0, 1.0);
        let x = uniform(rng, &[2, 3, 4, 4], -1.0, 1.0);
        let p = project(rng, &[2, 3, 4, 4]);
        out.push(check_op("broadcast_mul", &[m, x], opts, rng, |t, v| {
            let y = t.broadcast_mul(v[0], v[1])?;
            t.weighted_sum(y, p.clone())
        })?);
    }
    {
        let x = uniform(rng, &[1, 3, 4, 4], -1.0, 1.0);
        let p = project(rng, &[1, 3, 4, 4]);
        out.push(check_op("affine", &[x], opts, rng, |t, v| {
            let y = t.affine(v[0], -0.5, 0.5);
            t.weighted_sum(y, p.clone())
        })?);
    }
    {
        let x = uniform(rng, &[2, 8, 3, 3], -1.0, 1.0);
        let p = project(rng, &[2, 2, 6, 6]);
        out.push(check_op("subpixel_upsample", &[x], opts, rng, |t, v| {
            let y = t.subpixel_upsample(v[0], 2)?;
            t.weighted_sum(y, p.clone())
        })?);
    }
    {
        let a = uniform(rng, &[1, 2, 4, 4], -1.0, 1.0);
        let b = uniform(rng, &[1, 2, 4, 4], -1.0, 1.0);
        let p = project(rng, &[1, 2, 4, 4]);
        out.push(check_op("add", &[a, b], opts, rng, |t, v| {
            let y = t.add(v[0], v[1])?;
            t.weighted_sum(y, p.clone())
        })?);
    }
    {
        let target = uniform(rng, &[2, 2, 5, 5], 0.0, 1.0);
        let offset = away_from_zero(rng, &[2, 2, 5, 5], 1e-3);
        let pred = Tensor::from_fn(&[2, 2, 5, 5], |i| target.data()[i] + offset.data()[i]);
        out.push(check_op("l1_loss", &[pred, target], opts, rng, |t, v| t.l1_loss(v[0], v[1]))?);
    }
    {
        // Smooth ramps plus noise; every forward difference stays clear of zero.
        let x = Tensor::from_fn(&[2, 2, 6, 6], |i| {
            let (y, xi) = ((i / 6) % 6, i % 6);
            0.05 * xi as f64 + 0.03 * y as f64 + rng.random_range(0.0..0.01)
        });
        out.push(check_op("tv_l1", &[x], opts, rng, |t, v| t.tv_l1(v[0]))?);
    }
    {
        let x = uniform(rng, &[1, 2, 5, 5], -1.0, 1.0);
        let w = uniform(rng, &[3, 2, 3, 3], -0.5, 0.5);
        let b = uniform(rng, &[3], -0.2, 0.2);
        let target = uniform(rng, &[1, 3, 5, 5], -0.5, 0.5);
        out.push(check_op("conv_relu_l1", &[x, w, b], opts, rng, |t, v| {
            let tgt = t.constant(target.clone());
            let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            let y = t.relu(y);
            t.l1_loss(y, tgt)
        })?);
    }
    {
        let x = uniform(rng, &[1, 4, 6, 6], 0.1, 1.0);
        let y = uniform(rng, &[1, 4, 6, 6], 0.1, 1.0);
        out.push(check_op("l1_plus_tv", &[x, y], opts, rng, |t, v| {
            let l1 = t.l1_loss(v[0], v[1])?;
            let tv = t.tv_l1(v[0])?;
            let tv = t.scale(tv, 0.1);
            t.add(l1, tv)
        })?);
    }
    Ok(out)
}

/// One line per check plus a summary line.
pub fn format_report(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    s.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::CORRUPT_RELU_BACKWARD;

    #[test]
    fn suite_passes() {
        let results = op_suite(7).unwrap();
        for r in &results {
            assert!(r.passed(), "{r}");
            assert!(r.samples >= 20, "{r}");
        }
    }

    #[test]
    fn corrupted_backward_is_caught() {
        CORRUPT_RELU_BACKWARD.with(|c| c.set(true));
        let results = op_suite(7);
        CORRUPT_RELU_BACKWARD.with(|c| c.set(false));
        let results = results.unwrap();
        let relu = results.iter().find(|r| r.name == "relu").unwrap();
        assert!(!relu.passed(), "{relu}");
        assert!(format_report(&results).contains("FAIL relu"));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-4), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-4) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-8, 1e-4) - 1e-4).abs() < 1e-15);
    }
}
