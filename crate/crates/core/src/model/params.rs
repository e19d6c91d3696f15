use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::named_stream;
use crate::tensor::norm_groups;
use crate::tensor::{AttentionParams, ConvParams, ConvSpec, Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub(crate) fn add(&mut self, name: String, t: Tensor) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Replaces a tensor by name, keeping its shape.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let slot = self
            .by_name_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        if slot.shape() != t.shape() {
            return Err(Error::Shape(format!(
                "{name}: expected {:?}, got {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        *slot = t;
        Ok(())
    }

    /// Records every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.tensors.iter().map(|t| tape.param(t.clone())).collect())
    }
}

/// Tape handles for a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps tape handles that are already in [`ParamStore`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl ConvLayer {
    pub fn params(&self, b: &Bound) -> ConvParams {
        ConvParams {
            weight: b.var(self.weight),
            bias: Some(b.var(self.bias)),
            spec: self.spec,
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, self.params(b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl NormLayer {
    pub fn forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        tape.group_norm(x, b.var(self.gamma), b.var(self.beta), self.groups)
    }

    /// `relu(norm(x))`.
    pub fn activate(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(tape, b, x)?;
        tape.relu(y)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttnLayer {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl AttnLayer {
    pub fn params(&self, b: &Bound) -> AttentionParams {
        AttentionParams {
            wq: b.var(self.wq),
            wk: b.var(self.wk),
            wv: b.var(self.wv),
            wo: b.var(self.wo),
            heads: self.heads,
        }
    }
}

/// Registers freshly initialised parameters. Each tensor draws from its own
/// stream keyed by `(seed, name)`, so the value of a parameter does not
/// depend on which other parameters a model variant has.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub seed: u64,
}

impl Builder<'_> {
    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = (1.0 / fan_in as f64).sqrt();
        let mut rng = named_stream(self.seed, &name);
        let t = Tensor::from_fn(shape, |_| rng.uniform(-bound, bound));
        self.store.add(name, t)
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, spec: ConvSpec) -> ConvLayer {
        let fan_in = cin * k * k;
        ConvLayer {
            weight: self.uniform(format!("{name}.weight"), &[cout, cin, k, k], fan_in),
            bias: self.uniform(format!("{name}.bias"), &[cout], fan_in),
            spec,
        }
    }

    pub fn norm(&mut self, name: &str, channels: usize) -> NormLayer {
        NormLayer {
            gamma: self
                .store
                .add(format!("{name}.gamma"), Tensor::filled(&[channels], 1.0)),
            beta: self.store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            groups: norm_groups(channels),
        }
    }

    /// Attention projections; `wo` starts at zero.
    pub fn attention(&mut self, name: &str, channels: usize, heads: usize) -> AttnLayer {
        AttnLayer {
            wq: self.uniform(format!("{name}.wq"), &[channels, channels], channels),
            wk: self.uniform(format!("{name}.wk"), &[channels, channels], channels),
            wv: self.uniform(format!("{name}.wv"), &[channels, channels], channels),
            wo: self
                .store
                .add(format!("{name}.wo"), Tensor::zeros(&[channels, channels])),
            heads,
        }
    }
}
