//! Parameterised building blocks recorded on a [`Tape`].

use aura_tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Marker in the names of low-rank adapter parameters.
pub const ADAPTER_TAG: &str = ".adapter_";

/// A graph plus the parameters it reads, with each parameter recorded once.
pub struct Tape<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            g: Graph::new(),
            store,
            vars: vec![None; store.len()],
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let v = self.g.param(self.store, id);
        self.vars[id.0] = Some(v);
        v
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }
}

/// Seeded parameter factory.
pub(crate) struct Builder<'s> {
    pub store: &'s mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'s> Builder<'s> {
    pub fn new(store: &'s mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±sqrt(3 / fan_in)`, i.e. unit-variance preserving.
    pub fn fan_in(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> ParamId {
        let bound = (3.0 / fan_in as f64).sqrt();
        self.uniform(name, shape, bound)
    }

    pub fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64) -> ParamId {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.store.add(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: Vec<usize>, value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, value))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub(crate) fn new(b: &mut Builder, name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: b.fan_in(&format!("{name}.weight"), vec![inputs, outputs], inputs),
            bias: b.constant(&format!("{name}.bias"), vec![outputs], 0.0),
            inputs,
            outputs,
        }
    }

    /// `x[n, in] -> [n, out]`.
    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.weight);
        let b = t.param(self.bias);
        let y = t.g.matmul(x, w);
        t.g.add_row_bias(y, b)
    }
}

/// Low-rank update `scale * (x A) B`; `B` starts at zero.
#[derive(Clone, Debug)]
pub struct Adapter {
    pub down: ParamId,
    pub up: ParamId,
    pub scale: f64,
}

/// Linear map with an optional adapter.
#[derive(Clone, Debug)]
pub struct AdaptedLinear {
    pub base: Linear,
    pub adapter: Option<Adapter>,
}

impl AdaptedLinear {
    pub(crate) fn new(
        b: &mut Builder,
        name: &str,
        inputs: usize,
        outputs: usize,
        rank: usize,
        alpha: f64,
    ) -> Self {
        let base = Linear::new(b, name, inputs, outputs);
        let adapter = (rank > 0).then(|| Adapter {
            down: b.fan_in(&format!("{name}{ADAPTER_TAG}down"), vec![inputs, rank], inputs),
            up: b.constant(&format!("{name}{ADAPTER_TAG}up"), vec![rank, outputs], 0.0),
            scale: alpha / rank as f64,
        });
        Self { base, adapter }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let y = self.base.forward(t, x);
        match &self.adapter {
            None => y,
            Some(a) => {
                let down = t.param(a.down);
                let up = t.param(a.up);
                let h = t.g.matmul(x, down);
                let d = t.g.matmul(h, up);
                let d = t.g.scale(d, a.scale);
                t.g.add(y, d)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub(crate) fn new(b: &mut Builder, name: &str, width: usize) -> Self {
        Self {
            gamma: b.constant(&format!("{name}.gamma"), vec![width], 1.0),
            beta: b.constant(&format!("{name}.beta"), vec![width], 0.0),
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let g = t.param(self.gamma);
        let b = t.param(self.beta);
        t.g.layer_norm(x, g, b, LN_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub(crate) fn new(
        b: &mut Builder,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let fan_in = inputs * kernel * kernel;
        Self {
            weight: b.fan_in(&format!("{name}.weight"), vec![outputs, inputs, kernel, kernel], fan_in),
            bias: b.constant(&format!("{name}.bias"), vec![outputs], 0.0),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Var {
        let w = t.param(self.weight);
        let b = t.param(self.bias);
        t.g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}
