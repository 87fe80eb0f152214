use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ndiff::{Array, BatchStats, Gradients, Graph, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
const LN_EPS: f64 = 1e-6;

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array,
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Array,
    pub var: Array,
}

/// Ordered collection of named parameters plus batch-norm buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    stats: Vec<(String, RunningStats)>,
    stats_index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value });
        Ok(())
    }

    pub fn insert_stats(&mut self, name: impl Into<String>, channels: usize) {
        let name = name.into();
        let stats = RunningStats { mean: Array::zeros(&[channels]), var: Array::ones(&[channels]) };
        match self.stats_index.get(&name) {
            Some(&i) => self.stats[i].1 = stats,
            None => {
                self.stats_index.insert(name.clone(), self.stats.len());
                self.stats.push((name, stats));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.position(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.position(name).map(move |i| &mut self.params[i].value)
    }

    pub fn stats(&self) -> &[(String, RunningStats)] {
        &self.stats
    }

    pub fn running_stats(&self, name: &str) -> Option<&RunningStats> {
        self.stats_index.get(name).map(|&i| &self.stats[i].1)
    }

    pub fn set_running_stats(&mut self, name: &str, stats: RunningStats) -> Result<()> {
        let &i = self
            .stats_index
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown batch-norm layer {name}")))?;
        if stats.mean.shape() != self.stats[i].1.mean.shape() || stats.var.shape() != self.stats[i].1.var.shape() {
            return Err(Error::shape("set_running_stats", name.to_string()));
        }
        self.stats[i].1 = stats;
        Ok(())
    }

    /// Fold one batch of statistics into the running averages.
    pub fn commit_batch_stats(&mut self, updates: &[(String, BatchStats)]) -> Result<()> {
        for (name, batch) in updates {
            let &i = self
                .stats_index
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown batch-norm layer {name}")))?;
            let rs = &mut self.stats[i].1;
            let blend = |old: &Array, new: &Array| old.zip_map(new, |o, n| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * n);
            rs.mean = blend(&rs.mean, &batch.mean)?;
            rs.var = blend(&rs.var, &batch.var)?;
        }
        Ok(())
    }

    // Initialisers used by the network builders.

    pub(crate) fn conv<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        name: &str,
        cout: usize,
        cin: usize,
        k: usize,
        bias: bool,
    ) -> Result<()> {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        self.insert(format!("{name}.weight"), Array::randn(&[cout, cin, k, k], std, rng))?;
        if bias {
            self.insert(format!("{name}.bias"), Array::zeros(&[cout]))?;
        }
        Ok(())
    }

    pub(crate) fn conv_transpose<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Result<()> {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        self.insert(format!("{name}.weight"), Array::randn(&[cin, cout, k, k], std, rng))?;
        self.insert(format!("{name}.bias"), Array::zeros(&[cout]))
    }

    pub(crate) fn linear<R: Rng + ?Sized>(&mut self, rng: &mut R, name: &str, din: usize, dout: usize) -> Result<()> {
        self.insert(format!("{name}.weight"), Array::randn(&[din, dout], 0.02, rng))?;
        self.insert(format!("{name}.bias"), Array::zeros(&[dout]))
    }

    pub(crate) fn norm(&mut self, name: &str, channels: usize) -> Result<()> {
        self.insert(format!("{name}.gamma"), Array::ones(&[channels]))?;
        self.insert(format!("{name}.beta"), Array::zeros(&[channels]))
    }

    pub(crate) fn batch_norm(&mut self, name: &str, channels: usize) -> Result<()> {
        self.norm(name, channels)?;
        self.insert_stats(name, channels);
        Ok(())
    }
}

/// Binds a [`ParamSet`] to a [`Graph`] for one forward pass.
///
/// Each parameter becomes a graph leaf the first time it is used. In
/// training mode batch norm uses batch statistics and records them for
/// [`ParamSet::commit_batch_stats`]; in eval mode it uses the running
/// averages.
pub struct Session<'g, 'p> {
    graph: &'g Graph,
    params: &'p ParamSet,
    leaves: RefCell<Vec<Option<Tensor<'g>>>>,
    train: bool,
    trainable: bool,
    batch_stats: RefCell<Vec<(String, BatchStats)>>,
}

impl<'g, 'p> Session<'g, 'p> {
    /// Parameters become differentiable leaves; batch norm in train mode.
    pub fn train(graph: &'g Graph, params: &'p ParamSet) -> Self {
        Self::new(graph, params, true, true)
    }

    /// Parameters become constants; batch norm uses running statistics.
    pub fn eval(graph: &'g Graph, params: &'p ParamSet) -> Self {
        Self::new(graph, params, false, false)
    }

    pub fn new(graph: &'g Graph, params: &'p ParamSet, train: bool, trainable: bool) -> Self {
        Self {
            graph,
            params,
            leaves: RefCell::new(vec![None; params.len()]),
            train,
            trainable,
            batch_stats: RefCell::new(Vec::new()),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn get(&self, name: &str) -> Result<Tensor<'g>> {
        let i = self
            .params
            .position(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))?;
        let mut leaves = self.leaves.borrow_mut();
        if let Some(t) = leaves[i] {
            return Ok(t);
        }
        let value = self.params.params()[i].value.clone();
        let t = if self.trainable { self.graph.param(value) } else { self.graph.constant(value) };
        leaves[i] = Some(t);
        Ok(t)
    }

    pub fn has(&self, name: &str) -> bool {
        self.params.position(name).is_some()
    }

    /// Gradients of every parameter touched in this session, in
    /// [`ParamSet`] order; untouched parameters get zeros.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Array> {
        let leaves = self.leaves.borrow();
        self.params
            .params()
            .iter()
            .zip(leaves.iter())
            .map(|(p, leaf)| match leaf {
                Some(t) => grads.get_or_zeros(t),
                None => Array::zeros(p.value.shape()),
            })
            .collect()
    }

    pub fn take_batch_stats(&self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut self.batch_stats.borrow_mut())
    }

    pub fn conv(&self, name: &str, x: &Tensor<'g>, stride: usize, pad: usize) -> Result<Tensor<'g>> {
        let w = self.get(&format!("{name}.weight"))?;
        let b_name = format!("{name}.bias");
        let b = if self.has(&b_name) { Some(self.get(&b_name)?) } else { None };
        x.conv2d(&w, b.as_ref(), stride, pad)
    }

    pub fn conv_transpose(&self, name: &str, x: &Tensor<'g>, stride: usize) -> Result<Tensor<'g>> {
        let w = self.get(&format!("{name}.weight"))?;
        let b = self.get(&format!("{name}.bias"))?;
        x.conv_transpose2d(&w, Some(&b), stride, 0)
    }

    /// `x · W + b` over the last axis of a `[.., din]` tensor.
    pub fn linear(&self, name: &str, x: &Tensor<'g>) -> Result<Tensor<'g>> {
        let w = self.get(&format!("{name}.weight"))?;
        let b = self.get(&format!("{name}.bias"))?;
        let y = x.matmul(&w)?;
        let axis = y.shape().len() - 1;
        y.add_bias(&b, axis)
    }

    pub fn layer_norm(&self, name: &str, x: &Tensor<'g>) -> Result<Tensor<'g>> {
        let gamma = self.get(&format!("{name}.gamma"))?;
        let beta = self.get(&format!("{name}.beta"))?;
        x.layer_norm(&gamma, &beta, LN_EPS)
    }

    pub fn batch_norm(&self, name: &str, x: &Tensor<'g>) -> Result<Tensor<'g>> {
        let gamma = self.get(&format!("{name}.gamma"))?;
        let beta = self.get(&format!("{name}.beta"))?;
        if self.train {
            let (y, stats) = x.batch_norm_train(&gamma, &beta, BN_EPS)?;
            self.batch_stats.borrow_mut().push((name.to_string(), stats));
            Ok(y)
        } else {
            let rs = self
                .params
                .running_stats(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing running statistics {name}")))?;
            x.batch_norm_eval(&gamma, &beta, &rs.mean, &rs.var, BN_EPS)
        }
    }
}
