use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{sigmoid, Adagrad, Param};
use crate::error::{Error, Result};

static NEXT_STACK_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_STACK_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn grad(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer; weights are `out x in`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
}

impl DenseLayer {
    /// He-scaled normal weights, zero bias.
    pub fn new<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("valid std");
        let weight = (0..inputs * outputs).map(|_| normal.sample(rng)).collect();
        Self {
            inputs,
            outputs,
            weight: Param::new(weight),
            bias: Param::zeros(outputs),
            activation,
        }
    }

    pub fn from_parts(
        inputs: usize,
        outputs: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::ShapeMismatch {
                context: "dense layer parts".into(),
                expected: inputs * outputs,
                actual: weight.len(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            weight: Param::new(weight),
            bias: Param::new(bias),
            activation,
        })
    }
}

/// Chain of dense layers. Each stack carries an identity and a generation
/// counter so a cache from another stack or from before a parameter update
/// is rejected by the backward pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseStack {
    pub layers: Vec<DenseLayer>,
    #[serde(skip, default = "next_id")]
    id: u64,
    #[serde(skip)]
    generation: u64,
}

impl PartialEq for DenseStack {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    stack_id: u64,
    generation: u64,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl DenseCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }

    /// Pre-activation of the last layer (the logit for a logistic head).
    pub fn logit(&self) -> f64 {
        self.pre.last().map(|p| p[0]).unwrap_or(0.0)
    }
}

/// Parameter gradients for a [`DenseStack`], summed over examples.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl DenseGrads {
    pub fn zeros_like(stack: &DenseStack) -> Self {
        Self {
            weight: stack.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            bias: stack.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.weight.iter_mut().chain(self.bias.iter_mut()).for_each(|v| v.fill(0.0));
    }

    pub fn is_zero(&self) -> bool {
        self.weight.iter().chain(&self.bias).flatten().all(|&g| g == 0.0)
    }

    /// Blocks in the same order as [`DenseStack::params`].
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }
}

impl DenseStack {
    /// `widths` lists the input width followed by every layer width. Hidden
    /// layers use ReLU, the last layer uses `output`.
    pub fn new<R: Rng>(widths: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::config("layers", format!("invalid widths {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { Activation::Relu };
                DenseLayer::new(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("layers", "empty stack"));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].outputs != w[1].inputs {
                return Err(Error::ShapeMismatch {
                    context: format!("dense layer {} input", i + 1),
                    expected: w[0].outputs,
                    actual: w[1].inputs,
                });
            }
        }
        Ok(Self {
            layers,
            id: next_id(),
            generation: 0,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    /// Forward pass returning every activation.
    pub fn forward_raw(&self, input: &[f64]) -> Result<DenseCache> {
        if input.len() != self.input_width() {
            return Err(Error::ShapeMismatch {
                context: "dense stack input".into(),
                expected: self.input_width(),
                actual: input.len(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let x = if li == 0 { input } else { &post[li - 1] };
            let w = &layer.weight.value;
            let mut z = layer.bias.value.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                *zo += super::dot(row, x);
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("dense layer {li} pre-activation")));
            }
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        Ok(DenseCache {
            stack_id: self.id,
            generation: self.generation,
            input: input.to_vec(),
            pre,
            post,
        })
    }

    /// Forward pass of a logistic head; the output lies in (0, 1).
    pub fn forward(&self, input: &[f64]) -> Result<(f64, DenseCache)> {
        let last = self.layers.last().expect("non-empty");
        if last.outputs != 1 || last.activation != Activation::Sigmoid {
            return Err(Error::InvalidInput(
                "forward requires a single logistic output".into(),
            ));
        }
        let cache = self.forward_raw(input)?;
        Ok((cache.output()[0], cache))
    }

    fn check_cache(&self, cache: &DenseCache) -> Result<()> {
        if cache.stack_id != self.id {
            return Err(Error::StaleCache("cache belongs to another stack".into()));
        }
        if cache.generation != self.generation {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        Ok(())
    }

    /// Backpropagates a gradient on the last pre-activation, accumulating
    /// into `grads`. Returns the gradient with respect to the input.
    pub fn backward_pre_into(
        &self,
        cache: &DenseCache,
        d_last_pre: &[f64],
        grads: &mut DenseGrads,
    ) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        if d_last_pre.len() != self.output_width() {
            return Err(Error::ShapeMismatch {
                context: "dense upstream gradient".into(),
                expected: self.output_width(),
                actual: d_last_pre.len(),
            });
        }
        let mut delta = d_last_pre.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let x = if li == 0 { &cache.input } else { &cache.post[li - 1] };
            let w = &layer.weight.value;
            let gw = &mut grads.weight[li];
            let gb = &mut grads.bias[li];
            let mut dx = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * layer.inputs..(o + 1) * layer.inputs;
                for ((g, &xi), (dxi, &wi)) in gw[row.clone()]
                    .iter_mut()
                    .zip(x)
                    .zip(dx.iter_mut().zip(&w[row]))
                {
                    *g += d * xi;
                    *dxi += d * wi;
                }
            }
            if li > 0 {
                let prev = &self.layers[li - 1];
                for ((dxi, &p), &a) in dx.iter_mut().zip(&cache.pre[li - 1]).zip(&cache.post[li - 1]) {
                    *dxi *= prev.activation.grad(p, a);
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Backward pass of a logistic head given dL/dlogit.
    pub fn backward_logit_into(
        &self,
        cache: &DenseCache,
        dlogit: f64,
        grads: &mut DenseGrads,
    ) -> Result<Vec<f64>> {
        self.backward_pre_into(cache, &[dlogit], grads)
    }

    /// Backward pass given dL/d(output); returns fresh parameter gradients
    /// and the input gradient.
    pub fn backward(&self, cache: &DenseCache, upstream: f64) -> Result<(DenseGrads, Vec<f64>)> {
        let p = cache.output()[0];
        let mut grads = DenseGrads::zeros_like(self);
        let dx = self.backward_logit_into(cache, upstream * p * (1.0 - p), &mut grads)?;
        Ok((grads, dx))
    }

    /// Backward pass for a vector-output stack given dL/d(output).
    pub fn backward_output_into(
        &self,
        cache: &DenseCache,
        d_out: &[f64],
        grads: &mut DenseGrads,
    ) -> Result<Vec<f64>> {
        let last = self.layers.last().expect("non-empty");
        let li = self.layers.len() - 1;
        let d_pre: Vec<f64> = d_out
            .iter()
            .zip(&cache.pre[li])
            .zip(&cache.post[li])
            .map(|((d, &p), &a)| d * last.activation.grad(p, a))
            .collect();
        self.backward_pre_into(cache, &d_pre, grads)
    }

    pub fn apply_adagrad(
        &mut self,
        name: &str,
        grads: &DenseGrads,
        opt: &Adagrad,
        scale: f64,
    ) -> Result<()> {
        for i in 0..self.layers.len() {
            if grads.weight[i].iter().chain(&grads.bias[i]).any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}.{i}")));
            }
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            let (w, b) = (&mut l.weight, &mut l.bias);
            opt.step(&format!("{name}.{i}.w"), &mut w.value, &grads.weight[i], &mut w.accum, scale)?;
            opt.step(&format!("{name}.{i}.b"), &mut b.value, &grads.bias[i], &mut b.accum, scale)?;
        }
        self.generation += 1;
        Ok(())
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.w"), &l.weight));
            out.push((format!("{prefix}.{i}.b"), &l.bias));
        }
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.generation += 1;
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.{i}.w"), &mut l.weight));
            out.push((format!("{prefix}.{i}.b"), &mut l.bias));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{bce_with_logit, grad_check, GradCheckable};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn zero_weights_give_half() {
        let mut s = DenseStack::new(&[3, 4, 1], Activation::Sigmoid, &mut rng()).unwrap();
        for l in &mut s.layers {
            l.weight.value.fill(0.0);
        }
        let (p, _) = s.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn large_bias_saturates() {
        let layer = DenseLayer::from_parts(1, 1, vec![1.0], vec![50.0], Activation::Sigmoid).unwrap();
        let s = DenseStack::from_layers(vec![layer]).unwrap();
        let (p, _) = s.forward(&[1.0]).unwrap();
        assert!(p > 1.0 - 1e-15 && p <= 1.0);
    }

    /// Hand-set 2-layer stack:
    /// hidden = relu([[1, -1], [0.5, 2]] x + [0.1, -0.2]); logit = [2, -3] . hidden + 0.5
    /// For x = [1, 0]: hidden = [1.1, 0.3], logit = 2.2 - 0.9 + 0.5 = 1.8.
    fn toy() -> DenseStack {
        let l0 = DenseLayer::from_parts(2, 2, vec![1.0, -1.0, 0.5, 2.0], vec![0.1, -0.2], Activation::Relu)
            .unwrap();
        let l1 = DenseLayer::from_parts(2, 1, vec![2.0, -3.0], vec![0.5], Activation::Sigmoid).unwrap();
        DenseStack::from_layers(vec![l0, l1]).unwrap()
    }

    #[test]
    fn hand_computed_forward() {
        let (p, cache) = toy().forward(&[1.0, 0.0]).unwrap();
        assert!((cache.logit() - 1.8).abs() < 1e-12);
        assert!((p - 1.0 / (1.0 + (-1.8f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let s = toy();
        let (_, cache) = s.forward(&[1.0, 0.0]).unwrap();
        let (g, dx) = s.backward(&cache, 0.0).unwrap();
        assert!(g.is_zero());
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_neuron_input_gradient_closed_form() {
        let (w, b, x, y) = (0.7, -0.2, 1.3, 1.0);
        let layer = DenseLayer::from_parts(1, 1, vec![w], vec![b], Activation::Sigmoid).unwrap();
        let s = DenseStack::from_layers(vec![layer]).unwrap();
        let (p, cache) = s.forward(&[x]).unwrap();
        let mut g = DenseGrads::zeros_like(&s);
        let dx = s.backward_logit_into(&cache, p - y, &mut g).unwrap();
        assert!((dx[0] - (p - y) * w).abs() < 1e-15);
        // the dL/dp route agrees: dL/dp = (p - y) / (p (1 - p))
        let (_, dx2) = s.backward(&cache, (p - y) / (p * (1.0 - p))).unwrap();
        assert!((dx2[0] - dx[0]).abs() < 1e-12);
    }

    #[test]
    fn stale_and_foreign_caches_rejected() {
        let mut s = toy();
        let other = toy();
        let (_, cache) = s.forward(&[1.0, 0.0]).unwrap();
        assert!(matches!(other.backward(&cache, 1.0), Err(Error::StaleCache(_))));
        let g = DenseGrads::zeros_like(&s);
        s.apply_adagrad("toy", &g, &Adagrad::default(), 1.0).unwrap();
        assert!(matches!(s.backward(&cache, 1.0), Err(Error::StaleCache(_))));
    }

    #[test]
    fn input_width_checked() {
        assert!(matches!(
            toy().forward(&[1.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_reports_layer() {
        let err = toy().forward(&[f64::INFINITY, 0.0]).unwrap_err();
        assert!(err.to_string().contains("layer 0"));
    }

    struct StackProbe {
        stack: DenseStack,
        x: Vec<f64>,
        y: f64,
    }

    impl GradCheckable for StackProbe {
        fn num_params(&self) -> usize {
            let mut v = Vec::new();
            self.stack.params("s", &mut v);
            crate::nnet::flat_len(&v)
        }
        fn get_param(&self, i: usize) -> f64 {
            let mut v = Vec::new();
            self.stack.params("s", &mut v);
            crate::nnet::flat_get(&v, i).unwrap().1
        }
        fn set_param(&mut self, i: usize, value: f64) {
            let mut v = Vec::new();
            self.stack.params_mut("s", &mut v);
            crate::nnet::flat_set(&mut v, i, value);
        }
        fn loss(&self) -> f64 {
            let (_, c) = self.stack.forward(&self.x).unwrap();
            bce_with_logit(c.logit(), self.y)
        }
        fn analytic_grad(&mut self) -> Vec<f64> {
            let (p, c) = self.stack.forward(&self.x).unwrap();
            let mut g = DenseGrads::zeros_like(&self.stack);
            self.stack.backward_logit_into(&c, p - self.y, &mut g).unwrap();
            let mut out = Vec::new();
            g.flatten_into(&mut out);
            out
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng();
        for seed in 0..3 {
            let stack = DenseStack::new(&[5, 8, 6, 1], Activation::Sigmoid, &mut r).unwrap();
            let x: Vec<f64> = (0..5).map(|i| ((i + seed) as f64 * 0.37).sin()).collect();
            let mut probe = StackProbe { stack, x, y: (seed % 2) as f64 };
            let all: Vec<usize> = (0..probe.num_params()).collect();
            let report = grad_check(&mut probe, &all, 1e-5);
            assert!(report.max_rel_error <= 1e-4, "{report:?}");
        }
    }
}
