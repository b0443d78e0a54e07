use std::collections::HashMap;

use rand::Rng;

use super::{AutodiffError, Tape, Tensor, Var};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor with the same-named entry of `entries`, checking
    /// shapes.
    pub fn load_from<'a>(&mut self, mut find: impl FnMut(&str) -> Option<&'a Tensor>) -> Result<(), AutodiffError> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = find(name).ok_or_else(|| AutodiffError::MissingParam(name.clone()))?;
            if src.shape() != t.shape() {
                return Err(AutodiffError::Shape { op: "load", shapes: vec![t.shape().to_vec(), src.shape().to_vec()] });
            }
            *t = src.clone();
        }
        Ok(())
    }
}

/// Uniform fan-in initialization, `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("sized by construction")
}

/// Affine layer `x W + b` on `[n, fan_in]` inputs.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Linear, AutodiffError> {
        let w = store.add(format!("{name}.w"), kaiming_uniform(rng, fan_in, fan_out))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![1, fan_out]))?;
        Ok(Linear { w, b, fan_in, fan_out })
    }

    /// Weights and bias start at zero.
    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear, AutodiffError> {
        let w = store.add(format!("{name}.w"), Tensor::zeros(vec![fan_in, fan_out]))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![1, fan_out]))?;
        Ok(Linear { w, b, fan_in, fan_out })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        let y = tape.matmul(x, w)?;
        tape.add_row_bias(y, b)
    }
}

/// Stack of affine layers with ReLU between them; the last layer is linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists input, hidden and output sizes. With `zero_last` the
    /// final layer starts at zero so the network initially outputs zeros.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        zero_last: bool,
        rng: &mut impl Rng,
    ) -> Result<Mlp, AutodiffError> {
        if widths.len() < 2 {
            return Err(AutodiffError::Config(format!("{name}: an MLP needs at least input and output widths")));
        }
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let lname = format!("{name}.{i}");
            let layer = if zero_last && i == n - 1 {
                Linear::zeros(store, &lname, widths[i], widths[i + 1])?
            } else {
                Linear::new(store, &lname, widths[i], widths[i + 1], rng)?
            };
            layers.push(layer);
        }
        Ok(Mlp { layers })
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var, AutodiffError> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x)?;
            if i + 1 < self.layers.len() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }
}

/// Kernel-3, stride-1, same-padded temporal convolution over `[T, c_in]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Conv1d, AutodiffError> {
        let w = store.add(format!("{name}.w"), kaiming_uniform(rng, 3 * c_in, c_out))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![1, c_out]))?;
        Ok(Conv1d { w, b, c_in, c_out })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        if tape.value(x).cols() != self.c_in {
            return Err(AutodiffError::Shape { op: "conv1d", shapes: vec![tape.value(x).shape().to_vec()] });
        }
        let cols = tape.im2col3(x);
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        let y = tape.matmul(cols, w)?;
        tape.add_row_bias(y, b)
    }
}
