//! LSTM over a window of feature vectors; returns the last hidden state.
//!
//! Gate rows are stacked in the order input, forget, candidate, output.
//! State starts at zero for every window.

use rand::Rng;

use crate::init::glorot_uniform;
use crate::layers::sigmoid;
use crate::tensor::{axpy, dot, shape_err, NnError, Param, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// Input kernel `[4u, f]`.
    pub w: Param,
    /// Recurrent kernel `[4u, u]`.
    pub u: Param,
    /// Bias `[4u]`.
    pub b: Param,
}

/// Per-step values kept for backpropagation through time.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    pub z: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub a_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub tanh_a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmRecord {
    pub steps: Vec<LstmStep>,
    pub input_shape: Vec<usize>,
}

impl Lstm {
    pub fn new(w: Param, u: Param, b: Param) -> Result<Self, NnError> {
        let ws = w.value.shape();
        if ws.len() != 2 || ws[0] % 4 != 0 || ws[0] == 0 || ws[1] == 0 {
            return Err(shape_err("lstm input kernel", "[4u, f]", ws));
        }
        let units = ws[0] / 4;
        if u.value.shape() != [4 * units, units] {
            return Err(shape_err("lstm recurrent kernel", format!("[{}, {units}]", 4 * units), u.value.shape()));
        }
        if b.value.shape() != [4 * units] {
            return Err(shape_err("lstm bias", format!("[{}]", 4 * units), b.value.shape()));
        }
        Ok(Self { w, u, b })
    }

    /// Glorot kernels, zero bias except 1 on the forget gate.
    pub fn init(features: usize, units: usize, prefix: &str, rng: &mut impl Rng) -> Self {
        let w = Param::new(format!("{prefix}.kernel"), glorot_uniform(&[4 * units, features], rng), false);
        let u = Param::new(format!("{prefix}.recurrent"), glorot_uniform(&[4 * units, units], rng), false);
        let mut bias = vec![0.0; 4 * units];
        bias[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
        let b = Param::new(format!("{prefix}.bias"), Tensor::vector(bias), false);
        Self { w, u, b }
    }

    pub fn units(&self) -> usize {
        self.w.value.shape()[0] / 4
    }

    pub fn features(&self) -> usize {
        self.w.value.shape()[1]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.u, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.u, &mut self.b]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match input {
            [t, f] if *t >= 1 && *f == self.features() => Ok(vec![self.units()]),
            _ => Err(shape_err("lstm input", format!("[t ≥ 1, {}]", self.features()), input)),
        }
    }

    /// `W z + b`, the part of the gate pre-activation that depends only on the frame.
    pub fn input_projection(&self, z: &[f64]) -> Vec<f64> {
        let f = self.features();
        let (w, b) = (self.w.value.data(), self.b.value.data());
        (0..4 * self.units()).map(|r| dot(&w[r * f..(r + 1) * f], z) + b[r]).collect()
    }

    fn step(&self, xw: &[f64], h: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>, [Vec<f64>; 4], Vec<f64>) {
        let n = self.units();
        let u = self.u.value.data();
        // The first step of every window starts from h = 0; skip the product.
        let pre: Vec<f64> = if h.iter().all(|&v| v == 0.0) {
            xw[..4 * n].to_vec()
        } else {
            (0..4 * n).map(|r| xw[r] + dot(&u[r * n..(r + 1) * n], h)).collect()
        };
        let i: Vec<f64> = pre[..n].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = pre[n..2 * n].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = pre[2 * n..3 * n].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = pre[3 * n..].iter().map(|&v| sigmoid(v)).collect();
        let a_new: Vec<f64> = (0..n).map(|k| f[k] * a[k] + i[k] * g[k]).collect();
        let tanh_a: Vec<f64> = a_new.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<f64> = (0..n).map(|k| o[k] * tanh_a[k]).collect();
        (h_new, a_new, [i, f, g, o], tanh_a)
    }

    /// Final hidden state from precomputed input projections.
    pub fn run_projected(&self, projections: &[Vec<f64>]) -> Vec<f64> {
        let n = self.units();
        let (mut h, mut a) = (vec![0.0; n], vec![0.0; n]);
        for xw in projections {
            let (h_new, a_new, _, _) = self.step(xw, &h, &a);
            h = h_new;
            a = a_new;
        }
        h
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LstmRecord), NnError> {
        self.output_shape(x.shape())?;
        let (t, feat) = (x.shape()[0], x.shape()[1]);
        let n = self.units();
        let (mut h, mut a) = (vec![0.0; n], vec![0.0; n]);
        let mut steps = Vec::with_capacity(t);
        for s in 0..t {
            let z = &x.data()[s * feat..(s + 1) * feat];
            let xw = self.input_projection(z);
            let (h_new, a_new, [i, f, g, o], tanh_a) = self.step(&xw, &h, &a);
            steps.push(LstmStep { z: z.to_vec(), h_prev: h, a_prev: a, i, f, g, o, tanh_a });
            h = h_new;
            a = a_new;
        }
        Ok((Tensor::vector(h), LstmRecord { steps, input_shape: x.shape().to_vec() }))
    }

    /// Backpropagation through time from a gradient on the final hidden state.
    /// `grads = [d kernel, d recurrent, d bias]`.
    pub fn backward(&self, rec: &LstmRecord, dh_final: &Tensor, grads: &mut [Tensor]) -> Result<Tensor, NnError> {
        let n = self.units();
        let feat = self.features();
        if dh_final.shape() != [n] {
            return Err(shape_err("lstm backward", format!("[{n}]"), dh_final.shape()));
        }
        let [gw, gu, gb] = grads else { panic!("lstm expects three gradient slots") };
        let (w, u) = (self.w.value.data(), self.u.value.data());
        let t = rec.steps.len();
        let mut dx = vec![0.0; t * feat];
        let mut dh = dh_final.data().to_vec();
        let mut da = vec![0.0; n];
        let mut dpre = vec![0.0; 4 * n];
        for (s, st) in rec.steps.iter().enumerate().rev() {
            for k in 0..n {
                let d_o = dh[k] * st.tanh_a[k];
                da[k] += dh[k] * st.o[k] * (1.0 - st.tanh_a[k] * st.tanh_a[k]);
                let d_i = da[k] * st.g[k];
                let d_g = da[k] * st.i[k];
                let d_f = da[k] * st.a_prev[k];
                dpre[k] = d_i * st.i[k] * (1.0 - st.i[k]);
                dpre[n + k] = d_f * st.f[k] * (1.0 - st.f[k]);
                dpre[2 * n + k] = d_g * (1.0 - st.g[k] * st.g[k]);
                dpre[3 * n + k] = d_o * st.o[k] * (1.0 - st.o[k]);
                da[k] *= st.f[k];
            }
            let (gwd, gud, gbd) = (gw.data_mut(), gu.data_mut(), gb.data_mut());
            let dz = &mut dx[s * feat..(s + 1) * feat];
            let mut dh_prev = vec![0.0; n];
            for (r, &d) in dpre.iter().enumerate() {
                gbd[r] += d;
                if d == 0.0 {
                    continue;
                }
                axpy(d, &st.z, &mut gwd[r * feat..(r + 1) * feat]);
                axpy(d, &st.h_prev, &mut gud[r * n..(r + 1) * n]);
                axpy(d, &w[r * feat..(r + 1) * feat], dz);
                axpy(d, &u[r * n..(r + 1) * n], &mut dh_prev);
            }
            dh = dh_prev;
        }
        Tensor::new(rec.input_shape.clone(), dx)
    }
}
