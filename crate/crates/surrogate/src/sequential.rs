use rand::Rng;

use crate::layers::{Layer, LayerSpec, Record};
use crate::tensor::{shape_err, NnError, Param, Tensor};

/// Layers applied in order to a single input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer>,
}

/// Forward records of one pass through a [`Sequential`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    records: Vec<Record>,
}

impl Sequential {
    pub fn build(input_shape: &[usize], specs: &[LayerSpec], prefix: &str, rng: &mut impl Rng) -> Result<Self, NnError> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let (layer, out) = Layer::build(spec, &shape, &format!("{prefix}{i}"), rng)?;
            layers.push(layer);
            shape = out;
        }
        Ok(Self { input_shape: input_shape.to_vec(), output_shape: shape, layers })
    }

    pub fn from_layers(input_shape: &[usize], layers: Vec<Layer>) -> Result<Self, NnError> {
        let mut shape = input_shape.to_vec();
        for l in &layers {
            shape = l.output_shape(&shape)?;
        }
        Ok(Self { input_shape: input_shape.to_vec(), output_shape: shape, layers })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        if x.shape() == self.input_shape.as_slice() {
            Ok(())
        } else {
            Err(shape_err("sequential input", format!("{:?}", self.input_shape), x.shape()))
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Trace), NnError> {
        self.check_input(x)?;
        let mut records = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            let (y, rec) = l.forward(&cur)?;
            records.push(rec);
            cur = y;
        }
        Ok((cur, Trace { records }))
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.infer(&cur)?;
        }
        Ok(cur)
    }

    /// Returns `dL/dx` and accumulates parameter gradients into `grads`,
    /// laid out like [`Self::params`].
    pub fn backward(&self, trace: &Trace, dy: &Tensor, grads: &mut [Tensor]) -> Result<Tensor, NnError> {
        if trace.records.len() != self.layers.len() {
            return Err(NnError::MissingRecord);
        }
        let mut end = grads.len();
        let mut cur = dy.clone();
        for (l, rec) in self.layers.iter().zip(&trace.records).rev() {
            let k = l.params().len();
            cur = l.backward(rec, &cur, &mut grads[end - k..end])?;
            end -= k;
        }
        Ok(cur)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}
