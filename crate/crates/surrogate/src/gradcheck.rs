//! Central-difference checks of analytic gradients.
//!
//! The probe loss is `L = Σ r_k y_k` with fixed random weights `r`. Parameter
//! and input perturbations are differenced output by output before the
//! weighted sum, which keeps cancellation error near the rounding of `y`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{Activation, LayerSpec};
use crate::sequential::Sequential;
use crate::tensor::{NnError, Tensor};

pub const EPSILON: f64 = 1e-6;
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckResult {
    pub max_param_error: f64,
    pub max_input_error: f64,
    pub checked: usize,
}

impl CheckResult {
    pub fn max_error(&self) -> f64 {
        self.max_param_error.max(self.max_input_error)
    }
}

/// Rounding allowance on the central difference, in units of `Σ|r_k y_k| / 2ε`.
pub const ROUNDING_ULPS: f64 = 4.0;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Relative error after discounting `floor`, the absolute rounding noise of
/// the numeric derivative. With ε = 1e−6 that noise is near 1e−11, which
/// would otherwise swamp entries whose true gradient is below about 1e−5.
pub fn relative_excess(analytic: f64, numeric: f64, floor: f64) -> f64 {
    ((analytic - numeric).abs() - floor).max(0.0) / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

fn rounding_floor(r: &[f64], y: &[f64]) -> f64 {
    ROUNDING_ULPS * f64::EPSILON * r.iter().zip(y).map(|(r, y)| (r * y).abs()).sum::<f64>() / (2.0 * EPSILON)
}

fn probe(net: &Sequential, x: &Tensor) -> Result<Vec<f64>, NnError> {
    Ok(net.forward(x)?.0.into_data())
}

fn weighted_difference(r: &[f64], plus: &[f64], minus: &[f64]) -> f64 {
    r.iter().zip(plus.iter().zip(minus)).map(|(r, (p, m))| r * (p - m)).sum()
}

/// Compare backprop with central differences for every parameter and input entry.
pub fn check_network(net: &Sequential, x: &Tensor, rng: &mut impl Rng) -> Result<CheckResult, NnError> {
    let (y, trace) = net.forward(x)?;
    let r: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dy = Tensor::new(y.shape().to_vec(), r.clone())?;
    let mut grads = net.zero_grads();
    let dx = net.backward(&trace, &dy, &mut grads)?;

    let floor = rounding_floor(&r, y.data());
    let mut result = CheckResult { max_param_error: 0.0, max_input_error: 0.0, checked: 0 };
    let mut work = net.clone();
    let n_params = work.params().len();
    for k in 0..n_params {
        let len = work.params()[k].value.len();
        for j in 0..len {
            let orig = work.params()[k].value.data()[j];
            let (hi, lo) = (orig + EPSILON, orig - EPSILON);
            work.params_mut()[k].value.data_mut()[j] = hi;
            let plus = probe(&work, x)?;
            work.params_mut()[k].value.data_mut()[j] = lo;
            let minus = probe(&work, x)?;
            work.params_mut()[k].value.data_mut()[j] = orig;
            let numeric = weighted_difference(&r, &plus, &minus) / (hi - lo);
            let err = relative_excess(grads[k].data()[j], numeric, floor);
            result.max_param_error = result.max_param_error.max(err);
            result.checked += 1;
        }
    }
    let mut xp = x.clone();
    for j in 0..x.len() {
        let orig = x.data()[j];
        let (hi, lo) = (orig + EPSILON, orig - EPSILON);
        xp.data_mut()[j] = hi;
        let plus = probe(net, &xp)?;
        xp.data_mut()[j] = lo;
        let minus = probe(net, &xp)?;
        xp.data_mut()[j] = orig;
        let numeric = weighted_difference(&r, &plus, &minus) / (hi - lo);
        result.max_input_error = result.max_input_error.max(relative_excess(dx.data()[j], numeric, floor));
        result.checked += 1;
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    MaxPool,
    Dense,
    Lstm,
    Activation,
    Flatten,
    Reshape,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Conv2d,
        LayerKind::MaxPool,
        LayerKind::Dense,
        LayerKind::Lstm,
        LayerKind::Activation,
        LayerKind::Flatten,
        LayerKind::Reshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Dense => "dense",
            LayerKind::Lstm => "lstm",
            LayerKind::Activation => "activation",
            LayerKind::Flatten => "flatten",
            LayerKind::Reshape => "reshape",
        }
    }
}

/// Random input with distinct entries of magnitude in `[0.25, 1]`, so max-pool
/// windows have a clear winner and ReLU inputs sit away from the kink.
///
/// Inputs near zero give near-zero gradient entries, for which an ε = 1e−6
/// central difference carries rounding noise of order 1e−11 and the relative
/// error stops measuring anything.
fn spaced_input(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n)
        .map(|k| {
            let u = 0.25 + 0.75 * (k as f64 + 0.5) / n as f64;
            if k % 2 == 0 { u } else { -u }
        })
        .collect();
    for i in (1..n).rev() {
        values.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape.to_vec(), values).unwrap()
}

/// A small random network exercising `kind`, plus a matching input.
pub fn random_case(kind: LayerKind, seed: u64) -> Result<(Sequential, Tensor), NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.gen_range(1..=3);
    let (h, w) = (rng.gen_range(3..=6), rng.gen_range(3..=6));
    let (shape, specs): (Vec<usize>, Vec<LayerSpec>) = match kind {
        LayerKind::Conv2d => {
            let kernel = rng.gen_range(1..=h.min(w).min(3));
            (vec![c, h, w], vec![LayerSpec::Conv2d { filters: rng.gen_range(1..=3), kernel, nonneg: false }])
        }
        LayerKind::MaxPool => {
            let pool = rng.gen_range(1..=h.min(w).min(3));
            (vec![c, h, w], vec![LayerSpec::MaxPool { pool }])
        }
        LayerKind::Dense => {
            let n = rng.gen_range(1..=12);
            (vec![n], vec![LayerSpec::Dense { units: rng.gen_range(1..=8), nonneg: false }])
        }
        LayerKind::Lstm => {
            let (t, f) = (rng.gen_range(1..=4), rng.gen_range(1..=5));
            (vec![t, f], vec![LayerSpec::Lstm { units: rng.gen_range(1..=5) }])
        }
        LayerKind::Activation => {
            let act = [Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Identity][rng.gen_range(0..4)];
            (vec![rng.gen_range(1..=20)], vec![LayerSpec::Activation(act)])
        }
        LayerKind::Flatten => (vec![c, h, w], vec![LayerSpec::Flatten]),
        LayerKind::Reshape => (vec![c, h, w], vec![LayerSpec::Reshape(vec![c * h, w])]),
    };
    // A dense layer after shape-only layers makes the check non-trivial.
    let mut specs = specs;
    if matches!(kind, LayerKind::Flatten | LayerKind::Reshape | LayerKind::MaxPool) {
        if kind != LayerKind::Flatten {
            specs.push(LayerSpec::Flatten);
        }
        specs.push(LayerSpec::Dense { units: 3, nonneg: false });
    }
    let mut net = Sequential::build(&shape, &specs, "g", &mut rng)?;
    for p in net.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let x = spaced_input(&shape, &mut rng);
    Ok((net, x))
}

/// Worst relative error over `cases` random configurations of `kind`.
pub fn check_layer_kind(kind: LayerKind, cases: usize, seed: u64) -> Result<f64, NnError> {
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let case_seed = seed.wrapping_mul(1_000_003).wrapping_add(case as u64);
        let (net, x) = random_case(kind, case_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed ^ 0x5eed);
        worst = worst.max(check_network(&net, &x, &mut rng)?.max_error());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_kind_passes() {
        for kind in LayerKind::ALL {
            let worst = check_layer_kind(kind, 20, 7).unwrap();
            assert!(worst <= 1e-6, "{}: {worst:e}", kind.name());
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        assert!(relative_error(1.0, 1.1) > 0.05);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_excess(1e-6, 1e-6 + 1e-12, 1e-11), 0.0);
        assert!(relative_excess(1e-6, 1.1e-6, 1e-11) > 0.05);
    }

    #[test]
    fn composite_cnn_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let specs = vec![
            LayerSpec::Conv2d { filters: 2, kernel: 2, nonneg: true },
            LayerSpec::Activation(Activation::Relu),
            LayerSpec::MaxPool { pool: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 4, nonneg: true },
            LayerSpec::Activation(Activation::Sigmoid),
        ];
        let mut net = Sequential::build(&[2, 5, 5], &specs, "c", &mut rng).unwrap();
        for p in net.params_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v += 0.1);
        }
        let x = spaced_input(&[2, 5, 5], &mut rng);
        let r = check_network(&net, &x, &mut rng).unwrap();
        assert!(r.max_error() <= 1e-6, "{r:?}");
    }
}
