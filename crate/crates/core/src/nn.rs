//! Parameter storage and the small layer vocabulary the model is built from.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ConvGeom, Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Ids whose name starts with `prefix`.
    pub fn group(&self, prefix: &str) -> Vec<ParamId> {
        self.ids().filter(|id| self.name(*id).starts_with(prefix)).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Zero every parameter (used by linearity tests).
    pub fn zero_all(&mut self) {
        for v in &mut self.values {
            v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

pub fn xavier(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, output: usize, bias: bool) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(rng, &[input, output], input, output));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[output])));
        Self { weight, bias }
    }

    /// `x: [n, input] -> [n, output]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w, false, false);
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_broadcast(y, b)
            }
            None => y,
        }
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            first: Linear::new(store, rng, &format!("{name}.0"), input, hidden, true),
            second: Linear::new(store, rng, &format!("{name}.1"), hidden, output, true),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.first.forward(g, store, x);
        let h = g.relu(h);
        self.second.forward(g, store, h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        output: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> Self {
        let fan_in = input * geom.kernel * geom.kernel;
        let fan_out = output * geom.kernel * geom.kernel;
        let weight = store.add(format!("{name}.weight"), xavier(rng, &[output, fan_in], fan_in, fan_out));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[output])));
        Self { weight, bias, geom }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.geom)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[width], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[width])),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Single-head attention with bias-free query/key/value projections.
///
/// Returns `softmax(scale * Q K^T + bias) V` without any residual; callers
/// add the residual themselves.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

impl Attention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize) -> Self {
        Self {
            query: store.add(format!("{name}.query"), xavier(rng, &[width, width], width, width)),
            key: store.add(format!("{name}.key"), xavier(rng, &[width, width], width, width)),
            value: store.add(format!("{name}.value"), xavier(rng, &[width, width], width, width)),
        }
    }

    /// Attention logits `Q K^T` and projected values `V` for
    /// `queries: [nq, c]`. Keys are `[nk, c]`, or `[c, nk]` when `keys_t`.
    pub fn scores(&self, g: &mut Graph, store: &ParamStore, queries: Var, keys: Var, keys_t: bool) -> (Var, Var) {
        let wq = g.param(store, self.query);
        let wk = g.param(store, self.key);
        let wv = g.param(store, self.value);
        let q = g.matmul(queries, wq, false, false);
        let k = g.matmul(keys, wk, keys_t, false);
        let v = g.matmul(keys, wv, keys_t, false);
        (g.matmul(q, k, false, true), v)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        queries: Var,
        keys: Var,
        keys_t: bool,
        scale: f64,
        bias: Option<&[f64]>,
    ) -> Var {
        let (s, v) = self.scores(g, store, queries, keys, keys_t);
        let s = if scale != 1.0 { g.scale(s, scale) } else { s };
        let a = g.softmax_rows(s, bias);
        g.matmul(a, v, false, false)
    }
}
