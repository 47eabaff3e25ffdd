//! Layer kinds with explicit forward records for reverse mode.

use rand::Rng;
use rayon::prelude::*;

use crate::init::glorot_uniform;
use crate::lstm::{Lstm, LstmRecord};
use crate::tensor::{axpy, dot, shape_err, NnError, Param, Tensor};

/// Work below this many multiply-adds stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Identity]
            .into_iter()
            .find(|a| a.name() == name)
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Valid cross-correlation, stride 1. Filters are `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub filters: Param,
    pub bias: Param,
}

/// Output entries accumulated together in the conv forward pass.
const CONV_BLOCK: usize = 16;

impl Conv2d {
    pub fn new(filters: Param, bias: Param) -> Result<Self, NnError> {
        let s = filters.value.shape();
        if s.len() != 4 || s[2] != s[3] || s[0] == 0 || s[1] == 0 || s[2] == 0 {
            return Err(shape_err("conv2d filters", "[out, in, k, k]", s));
        }
        if bias.value.shape() != [s[0]] {
            return Err(shape_err("conv2d bias", format!("[{}]", s[0]), bias.value.shape()));
        }
        Ok(Self { filters, bias })
    }

    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        nonneg: bool,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Self {
        let mut filters =
            Param::new(format!("{prefix}.filters"), glorot_uniform(&[out_channels, in_channels, kernel, kernel], rng), nonneg);
        filters.project();
        let bias = Param::new(format!("{prefix}.bias"), Tensor::zeros(&[out_channels]), false);
        Self { filters, bias }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.filters.value.shape();
        (s[0], s[1], s[2])
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let (o, c, m) = self.dims();
        match input {
            [ci, h, w] if *ci == c && *h >= m && *w >= m => Ok(vec![o, h - m + 1, w - m + 1]),
            _ => Err(shape_err("conv2d input", format!("[{c}, ≥{m}, ≥{m}]"), input)),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let out_shape = self.output_shape(x.shape())?;
        let (o, c, m) = self.dims();
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (ho, wo) = (out_shape[1], out_shape[2]);
        let f = self.filters.value.data();
        let b = self.bias.value.data();
        let xd = x.data();
        let mut out = vec![0.0; o * ho * wo];
        // Output rows are accumulated at the input width `w`, so each tap is a
        // single long axpy; columns past `wo` are scratch and dropped after.
        let span = (ho - 1) * w + wo;
        let plane = |(oc, plane): (usize, &mut [f64])| {
            let mut taps = Vec::with_capacity(c * m * m);
            for ci in 0..c {
                for p in 0..m {
                    for q in 0..m {
                        taps.push((f[((oc * c + ci) * m + p) * m + q], (ci * h + p) * w + q));
                    }
                }
            }
            let mut wide = vec![0.0; span];
            // Blocks of outputs stay in registers while every tap is applied.
            for (j0, block) in wide.chunks_mut(CONV_BLOCK).enumerate().map(|(k, blk)| (k * CONV_BLOCK, blk)) {
                if block.len() == CONV_BLOCK {
                    let mut acc = [b[oc]; CONV_BLOCK];
                    for &(wv, off) in &taps {
                        let xs = &xd[off + j0..off + j0 + CONV_BLOCK];
                        for j in 0..CONV_BLOCK {
                            acc[j] += wv * xs[j];
                        }
                    }
                    block.copy_from_slice(&acc);
                } else {
                    block.fill(b[oc]);
                    for &(wv, off) in &taps {
                        axpy(wv, &xd[off + j0..off + j0 + block.len()], block);
                    }
                }
            }
            for i in 0..ho {
                plane[i * wo..(i + 1) * wo].copy_from_slice(&wide[i * w..i * w + wo]);
            }
        };
        if o * c * m * m * ho * wo >= PAR_THRESHOLD {
            out.par_chunks_mut(ho * wo).enumerate().for_each(plane);
        } else {
            out.chunks_mut(ho * wo).enumerate().for_each(plane);
        }
        Tensor::new(out_shape, out)
    }

    /// Returns `dL/dx`; accumulates into `grads = [d filters, d bias]`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grads: &mut [Tensor]) -> Result<Tensor, NnError> {
        let out_shape = self.output_shape(x.shape())?;
        if dy.shape() != out_shape.as_slice() {
            return Err(shape_err("conv2d backward", format!("{out_shape:?}"), dy.shape()));
        }
        let (o, c, m) = self.dims();
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (ho, wo) = (out_shape[1], out_shape[2]);
        let f = self.filters.value.data();
        let (xd, dyd) = (x.data(), dy.data());
        let [gf, gb] = grads else { panic!("conv2d expects two gradient slots") };

        for (oc, gbv) in gb.data_mut().iter_mut().enumerate() {
            *gbv += dyd[oc * ho * wo..(oc + 1) * ho * wo].iter().sum::<f64>();
        }
        let big = o * c * m * m * ho * wo >= PAR_THRESHOLD;
        let filter_grad = |(oc, gslab): (usize, &mut [f64])| {
            let dplane = &dyd[oc * ho * wo..(oc + 1) * ho * wo];
            for ci in 0..c {
                for p in 0..m {
                    for q in 0..m {
                        let mut acc = 0.0;
                        for i in 0..ho {
                            let start = (ci * h + i + p) * w + q;
                            acc += dot(&dplane[i * wo..(i + 1) * wo], &xd[start..start + wo]);
                        }
                        gslab[(ci * m + p) * m + q] += acc;
                    }
                }
            }
        };
        if big {
            gf.data_mut().par_chunks_mut(c * m * m).enumerate().for_each(filter_grad);
        } else {
            gf.data_mut().chunks_mut(c * m * m).enumerate().for_each(filter_grad);
        }

        let mut dx = vec![0.0; c * h * w];
        let input_grad = |(ci, dplane): (usize, &mut [f64])| {
            for oc in 0..o {
                let dyp = &dyd[oc * ho * wo..(oc + 1) * ho * wo];
                for p in 0..m {
                    for q in 0..m {
                        let wv = f[((oc * c + ci) * m + p) * m + q];
                        for i in 0..ho {
                            let start = (i + p) * w + q;
                            axpy(wv, &dyp[i * wo..(i + 1) * wo], &mut dplane[start..start + wo]);
                        }
                    }
                }
            }
        };
        if big {
            dx.par_chunks_mut(h * w).enumerate().for_each(input_grad);
        } else {
            dx.chunks_mut(h * w).enumerate().for_each(input_grad);
        }
        Tensor::new(x.shape().to_vec(), dx)
    }
}

/// Non-overlapping `k × k` max pooling; trailing rows and columns are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub pool: usize,
}

impl MaxPool2d {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let k = self.pool;
        match input {
            [c, h, w] if k >= 1 && *h >= k && *w >= k => Ok(vec![*c, h / k, w / k]),
            _ => Err(shape_err("maxpool input", format!("[c, ≥{k}, ≥{k}]"), input)),
        }
    }

    /// Output and the flat input index of each selected maximum. Ties go to
    /// the first position in row-major order.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>), NnError> {
        let out_shape = self.output_shape(x.shape())?;
        let k = self.pool;
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (c, ho, wo) = (out_shape[0], out_shape[1], out_shape[2]);
        let xd = x.data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ci in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = (ci * h + i * k) * w + j * k;
                    for p in 0..k {
                        for q in 0..k {
                            let idx = (ci * h + i * k + p) * w + j * k + q;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        Ok((Tensor::new(out_shape, out)?, argmax))
    }

    pub fn backward(in_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Result<Tensor, NnError> {
        if dy.len() != argmax.len() {
            return Err(shape_err("maxpool backward", format!("{} values", argmax.len()), dy.shape()));
        }
        let mut dx = Tensor::zeros(in_shape);
        let d = dx.data_mut();
        for (&idx, &g) in argmax.iter().zip(dy.data()) {
            d[idx] += g;
        }
        Ok(dx)
    }
}

/// `y = W x + b` with `W` of shape `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new(weight: Param, bias: Param) -> Result<Self, NnError> {
        let s = weight.value.shape();
        if s.len() != 2 || s[0] == 0 || s[1] == 0 {
            return Err(shape_err("dense weight", "[out, in]", s));
        }
        if bias.value.shape() != [s[0]] {
            return Err(shape_err("dense bias", format!("[{}]", s[0]), bias.value.shape()));
        }
        Ok(Self { weight, bias })
    }

    pub fn init(inputs: usize, outputs: usize, nonneg: bool, prefix: &str, rng: &mut impl Rng) -> Self {
        let mut weight = Param::new(format!("{prefix}.weight"), glorot_uniform(&[outputs, inputs], rng), nonneg);
        weight.project();
        let bias = Param::new(format!("{prefix}.bias"), Tensor::zeros(&[outputs]), false);
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        if input.len() == 1 && input[0] == self.inputs() {
            Ok(vec![self.outputs()])
        } else {
            Err(shape_err("dense input", format!("[{}]", self.inputs()), input))
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let shape = self.output_shape(x.shape())?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let (w, b, xd) = (self.weight.value.data(), self.bias.value.data(), x.data());
        let row = |o: usize| dot(&w[o * n_in..(o + 1) * n_in], xd) + b[o];
        let y: Vec<f64> = if n_in * n_out >= PAR_THRESHOLD {
            (0..n_out).into_par_iter().map(row).collect()
        } else {
            (0..n_out).map(row).collect()
        };
        Tensor::new(shape, y)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor, grads: &mut [Tensor]) -> Result<Tensor, NnError> {
        if dy.shape() != [self.outputs()] {
            return Err(shape_err("dense backward", format!("[{}]", self.outputs()), dy.shape()));
        }
        let n_in = self.inputs();
        let (w, xd, dyd) = (self.weight.value.data(), x.data(), dy.data());
        let [gw, gb] = grads else { panic!("dense expects two gradient slots") };
        gb.data_mut().iter_mut().zip(dyd).for_each(|(g, d)| *g += d);
        let outer = |(o, grow): (usize, &mut [f64])| axpy(dyd[o], xd, grow);
        if w.len() >= PAR_THRESHOLD {
            gw.data_mut().par_chunks_mut(n_in).enumerate().for_each(outer);
        } else {
            gw.data_mut().chunks_mut(n_in).enumerate().for_each(outer);
        }
        let mut dx = vec![0.0; n_in];
        for (o, &d) in dyd.iter().enumerate() {
            axpy(d, &w[o * n_in..(o + 1) * n_in], &mut dx);
        }
        Tensor::new(x.shape().to_vec(), dx)
    }
}

/// Layer description used to build a [`crate::Sequential`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d { filters: usize, kernel: usize, nonneg: bool },
    MaxPool { pool: usize },
    Dense { units: usize, nonneg: bool },
    Lstm { units: usize },
    Activation(Activation),
    Flatten,
    Reshape(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    MaxPool(MaxPool2d),
    Dense(Dense),
    Lstm(Lstm),
    Activation(Activation),
    Flatten,
    Reshape(Vec<usize>),
}

/// What a layer keeps from its forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Input(Tensor),
    Pool { in_shape: Vec<usize>, argmax: Vec<usize> },
    Lstm(LstmRecord),
    Output(Tensor),
    Shape(Vec<usize>),
}

impl Layer {
    /// Build a layer for `input` shape, returning the layer and its output shape.
    pub fn build(
        spec: &LayerSpec,
        input: &[usize],
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<(Layer, Vec<usize>), NnError> {
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(NnError::Config(format!("{prefix}: {what} must be positive")))
            } else {
                Ok(())
            }
        };
        let layer = match spec {
            LayerSpec::Conv2d { filters, kernel, nonneg } => {
                positive(*filters, "filter count")?;
                positive(*kernel, "kernel size")?;
                let [c, _, _] = input else { return Err(shape_err("conv2d input", "[c, h, w]", input)) };
                Layer::Conv2d(Conv2d::init(*c, *filters, *kernel, *nonneg, prefix, rng))
            }
            LayerSpec::MaxPool { pool } => {
                positive(*pool, "pool size")?;
                Layer::MaxPool(MaxPool2d { pool: *pool })
            }
            LayerSpec::Dense { units, nonneg } => {
                positive(*units, "unit count")?;
                let [n] = input else { return Err(shape_err("dense input", "[n]", input)) };
                Layer::Dense(Dense::init(*n, *units, *nonneg, prefix, rng))
            }
            LayerSpec::Lstm { units } => {
                positive(*units, "unit count")?;
                let [_, f] = input else { return Err(shape_err("lstm input", "[t, f]", input)) };
                Layer::Lstm(Lstm::init(*f, *units, prefix, rng))
            }
            LayerSpec::Activation(a) => Layer::Activation(*a),
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Reshape(s) => Layer::Reshape(s.clone()),
        };
        let out = layer.output_shape(input)?;
        if out.iter().any(|&d| d == 0) {
            return Err(NnError::Config(format!("{prefix}: output shape {out:?} is empty")));
        }
        Ok((layer, out))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::MaxPool(_) => "maxpool",
            Layer::Dense(_) => "dense",
            Layer::Lstm(_) => "lstm",
            Layer::Activation(_) => "activation",
            Layer::Flatten => "flatten",
            Layer::Reshape(_) => "reshape",
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match self {
            Layer::Conv2d(l) => l.output_shape(input),
            Layer::MaxPool(l) => l.output_shape(input),
            Layer::Dense(l) => l.output_shape(input),
            Layer::Lstm(l) => l.output_shape(input),
            Layer::Activation(_) => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Reshape(s) => {
                if s.iter().product::<usize>() == input.iter().product::<usize>() {
                    Ok(s.clone())
                } else {
                    Err(shape_err("reshape input", format!("{} values", s.iter().product::<usize>()), input))
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Record), NnError> {
        Ok(match self {
            Layer::Conv2d(l) => (l.forward(x)?, Record::Input(x.clone())),
            Layer::MaxPool(l) => {
                let (y, argmax) = l.forward(x)?;
                (y, Record::Pool { in_shape: x.shape().to_vec(), argmax })
            }
            Layer::Dense(l) => (l.forward(x)?, Record::Input(x.clone())),
            Layer::Lstm(l) => {
                let (y, rec) = l.forward(x)?;
                (y, Record::Lstm(rec))
            }
            Layer::Activation(a) => {
                let y = x.map(|v| a.apply(v));
                (y.clone(), Record::Output(y))
            }
            Layer::Flatten | Layer::Reshape(_) => {
                let shape = self.output_shape(x.shape())?;
                (x.clone().reshaped(&shape)?, Record::Shape(x.shape().to_vec()))
            }
        })
    }

    /// Forward pass without keeping a record.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NnError> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
            Layer::MaxPool(l) => Ok(l.forward(x)?.0),
            Layer::Activation(a) => Ok(x.map(|v| a.apply(v))),
            _ => Ok(self.forward(x)?.0),
        }
    }

    pub fn backward(&self, record: &Record, dy: &Tensor, grads: &mut [Tensor]) -> Result<Tensor, NnError> {
        match (self, record) {
            (Layer::Conv2d(l), Record::Input(x)) => l.backward(x, dy, grads),
            (Layer::Dense(l), Record::Input(x)) => l.backward(x, dy, grads),
            (Layer::MaxPool(_), Record::Pool { in_shape, argmax }) => MaxPool2d::backward(in_shape, argmax, dy),
            (Layer::Lstm(l), Record::Lstm(rec)) => l.backward(rec, dy, grads),
            (Layer::Activation(a), Record::Output(y)) => {
                if dy.shape() != y.shape() {
                    return Err(shape_err("activation backward", format!("{:?}", y.shape()), dy.shape()));
                }
                let data = y.data().iter().zip(dy.data()).map(|(&y, &d)| d * a.derivative_from_output(y)).collect();
                Tensor::new(y.shape().to_vec(), data)
            }
            (Layer::Flatten | Layer::Reshape(_), Record::Shape(s)) => dy.clone().reshaped(s),
            _ => Err(NnError::MissingRecord),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv2d(l) => vec![&l.filters, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Lstm(l) => l.params(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.filters, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Lstm(l) => l.params_mut(),
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn conv(filters: Tensor, bias: Tensor) -> Conv2d {
        Conv2d::new(Param::new("f", filters, false), Param::new("b", bias, false)).unwrap()
    }

    /// Quadruple loop straight from the definition.
    fn conv_oracle(x: &Tensor, f: &Tensor, b: &Tensor) -> Vec<f64> {
        let (o, c, m) = (f.shape()[0], f.shape()[1], f.shape()[2]);
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let mut out = Vec::new();
        for oc in 0..o {
            for i in 0..=h - m {
                for j in 0..=w - m {
                    let mut s = b.data()[oc];
                    for ci in 0..c {
                        for p in 0..m {
                            for q in 0..m {
                                s += f.data()[((oc * c + ci) * m + p) * m + q] * x.data()[(ci * h + i + p) * w + j + q];
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
        out
    }

    #[test]
    fn conv_hand_example() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let l = conv(Tensor::full(&[1, 1, 2, 2], 1.0), Tensor::zeros(&[1]));
        let y = l.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
        let id = conv(Tensor::full(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]));
        assert_eq!(id.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (o, c, m) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
            let (h, w) = (rng.gen_range(m..=5), rng.gen_range(m..=5));
            let x = random_tensor(&[c, h, w], &mut rng);
            let f = random_tensor(&[o, c, m, m], &mut rng);
            let b = random_tensor(&[o], &mut rng);
            let got = conv(f.clone(), b.clone()).forward(&x).unwrap();
            for (g, w) in got.data().iter().zip(conv_oracle(&x, &f, &b)) {
                assert!((g - w).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let l = conv(Tensor::zeros(&[2, 3, 3, 3]), Tensor::zeros(&[2]));
        assert!(l.forward(&Tensor::zeros(&[2, 5, 5])).is_err());
        assert!(l.forward(&Tensor::zeros(&[3, 2, 5])).is_err());
        assert!(Conv2d::new(Param::new("f", Tensor::zeros(&[2, 3, 3]), false), Param::new("b", Tensor::zeros(&[2]), false)).is_err());
    }

    #[test]
    fn pool_examples() {
        let p = MaxPool2d { pool: 2 };
        let (y, arg) = p.forward(&Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!((y.data(), arg.as_slice()), (&[4.0][..], &[3][..]));
        let x = Tensor::new(vec![1, 2, 3], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0]).unwrap();
        assert_eq!(MaxPool2d { pool: 1 }.forward(&x).unwrap().0, x);
        let (_, arg) = p.forward(&Tensor::full(&[1, 2, 2], 7.0)).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn pool_matches_loop_oracle_with_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[2, 5, 5], &mut rng);
        let (y, arg) = MaxPool2d { pool: 2 }.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        for c in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let window = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(p, q)| (c * 5 + 2 * i + p) * 5 + 2 * j + q);
                    let best = window.into_iter().max_by(|a, b| x.data()[*a].total_cmp(&x.data()[*b])).unwrap();
                    let k = (c * 2 + i) * 2 + j;
                    assert_eq!(arg[k], best);
                    assert_eq!(y.data()[k], x.data()[best]);
                }
            }
        }
        let dx = MaxPool2d::backward(&[2, 5, 5], &arg, &Tensor::full(&[2, 2, 2], 1.0)).unwrap();
        assert_eq!(dx.data().iter().sum::<f64>(), 8.0);
        assert!(arg.iter().all(|&i| dx.data()[i] == 1.0));
    }

    #[test]
    fn dense_examples() {
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 4] = 1.0;
        }
        let l = Dense::new(Param::new("w", w, false), Param::new("b", Tensor::zeros(&[3]), false)).unwrap();
        let x = Tensor::vector(vec![0.3, -2.0, 5.0]);
        assert_eq!(l.forward(&x).unwrap(), x);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_tensor(&[4, 5], &mut rng);
        let b = random_tensor(&[4], &mut rng);
        let x = random_tensor(&[5], &mut rng);
        let l = Dense::new(Param::new("w", w.clone(), false), Param::new("b", b.clone(), false)).unwrap();
        let y = l.forward(&x).unwrap();
        for o in 0..4 {
            let mut s = b.data()[o];
            for i in 0..5 {
                s += w.data()[o * 5 + i] * x.data()[i];
            }
            assert!((y.data()[o] - s).abs() <= 1e-13);
        }
    }

    #[test]
    fn dense_mse_gradient_closed_form() {
        // L = ½‖Wx − t‖², so dL/dW = (y − t) xᵀ.
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let l = Dense::new(Param::new("w", w, false), Param::new("b", Tensor::zeros(&[2]), false)).unwrap();
        let x = Tensor::vector(vec![1.0, -1.0]);
        let y = l.forward(&x).unwrap();
        assert_eq!(y.data(), &[-1.0, -1.0]);
        let t = [0.5, -2.0];
        let dy = Tensor::vector(vec![y.data()[0] - t[0], y.data()[1] - t[1]]);
        let mut grads = vec![Tensor::zeros(&[2, 2]), Tensor::zeros(&[2])];
        l.backward(&x, &dy, &mut grads).unwrap();
        assert_eq!(grads[0].data(), &[-1.5, 1.5, 1.0, -1.0]);
        assert_eq!(grads[1].data(), &[-1.5, 1.0]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = Conv2d::init(2, 3, 2, false, "c", &mut rng);
        let x = random_tensor(&[2, 4, 4], &mut rng);
        let mut grads = vec![Tensor::zeros(&[3, 2, 2, 2]), Tensor::zeros(&[3])];
        let dx = l.backward(&x, &Tensor::zeros(&[3, 3, 3]), &mut grads).unwrap();
        assert!(dx.data().iter().chain(grads[0].data()).chain(grads[1].data()).all(|v| *v == 0.0));
    }

    #[test]
    fn backward_needs_matching_record() {
        let l = Layer::Activation(Activation::Relu);
        let err = l.backward(&Record::Shape(vec![2]), &Tensor::zeros(&[2]), &mut []).unwrap_err();
        assert_eq!(err, NnError::MissingRecord);
    }

    #[test]
    fn activation_names_roundtrip() {
        for a in [Activation::Relu, Activation::Sigmoid, Activation::Tanh, Activation::Identity] {
            assert_eq!(Activation::from_name(a.name()), Some(a));
        }
        assert_eq!(Activation::from_name("softmax"), None);
    }

    proptest! {
        #[test]
        fn sigmoid_in_open_unit_interval(x in -30.0..30.0f64) {
            let y = sigmoid(x);
            prop_assert!(y > 0.0 && y < 1.0);
        }

        #[test]
        fn conv_is_linear(seed in 0u64..1000, a in -2.0..2.0f64, b in -2.0..2.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = conv(random_tensor(&[2, 2, 3, 3], &mut rng), Tensor::zeros(&[2]));
            let x = random_tensor(&[2, 5, 4], &mut rng);
            let z = random_tensor(&[2, 5, 4], &mut rng);
            let mix = Tensor::new(vec![2, 5, 4], x.data().iter().zip(z.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = l.forward(&mix).unwrap();
            let (yx, yz) = (l.forward(&x).unwrap(), l.forward(&z).unwrap());
            for i in 0..lhs.len() {
                prop_assert!((lhs.data()[i] - (a * yx.data()[i] + b * yz.data()[i])).abs() <= 1e-12);
            }
        }

        #[test]
        fn relu_and_pool_keep_non_negative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::new(vec![2, 6, 6], (0..72).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
            let (p, _) = MaxPool2d { pool: 2 }.forward(&x).unwrap();
            prop_assert!(p.min() >= 0.0);
            prop_assert!(x.map(|v| Activation::Relu.apply(v)).min() >= 0.0);
        }
    }
}
