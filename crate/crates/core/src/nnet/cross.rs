//! Explicit feature-crossing layer: `x_{l+1} = x0 * (x_l . w) + b + x_l`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dot, Adagrad, Param};
use crate::error::{Error, Result};

fn check_widths(ctx: &str, expected: usize, others: &[usize]) -> Result<()> {
    for &w in others {
        if w != expected {
            return Err(Error::ShapeMismatch {
                context: ctx.into(),
                expected,
                actual: w,
            });
        }
    }
    Ok(())
}

/// One cross layer applied to explicit vectors.
pub fn cross_layer(x0: &[f64], xl: &[f64], w: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_widths("cross layer", x0.len(), &[xl.len(), w.len(), b.len()])?;
    let s = dot(xl, w);
    Ok(x0
        .iter()
        .zip(b)
        .zip(xl)
        .map(|((x, bi), l)| x * s + bi + l)
        .collect())
}

/// Gradients of one cross layer: `(d_x0, d_xl, d_w, d_b)` for upstream `g`.
pub fn cross_backward(
    x0: &[f64],
    xl: &[f64],
    w: &[f64],
    g: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_widths("cross backward", x0.len(), &[xl.len(), w.len(), g.len()])?;
    let s = dot(xl, w);
    let t = dot(g, x0);
    let d_x0 = g.iter().map(|gi| gi * s).collect();
    let d_xl = g.iter().zip(w).map(|(gi, wi)| gi + t * wi).collect();
    let d_w = xl.iter().map(|x| t * x).collect();
    Ok((d_x0, d_xl, d_w, g.to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossLayer {
    pub weight: Param,
    pub bias: Param,
}

/// Stack of cross layers sharing the same base input `x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossStack {
    pub width: usize,
    pub layers: Vec<CrossLayer>,
}

#[derive(Debug, Clone)]
pub struct CrossStackCache {
    /// x_0, x_1, ..., x_L
    xs: Vec<Vec<f64>>,
    scalars: Vec<f64>,
}

impl CrossStackCache {
    pub fn output(&self) -> &[f64] {
        self.xs.last().expect("x0 present")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossGrads {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl CrossGrads {
    pub fn zeros_like(stack: &CrossStack) -> Self {
        Self {
            weight: vec![vec![0.0; stack.width]; stack.layers.len()],
            bias: vec![vec![0.0; stack.width]; stack.layers.len()],
        }
    }

    pub fn clear(&mut self) {
        self.weight.iter_mut().chain(self.bias.iter_mut()).for_each(|v| v.fill(0.0));
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }
}

impl CrossStack {
    /// Weights uniform in ±1/sqrt(width), zero bias.
    pub fn new<R: Rng>(width: usize, depth: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (width as f64).sqrt();
        let layers = (0..depth)
            .map(|_| CrossLayer {
                weight: Param::new((0..width).map(|_| rng.random_range(-scale..scale)).collect()),
                bias: Param::zeros(width),
            })
            .collect();
        Self { width, layers }
    }

    pub fn forward(&self, x0: &[f64]) -> Result<CrossStackCache> {
        check_widths("cross stack input", self.width, &[x0.len()])?;
        let mut xs = Vec::with_capacity(self.layers.len() + 1);
        let mut scalars = Vec::with_capacity(self.layers.len());
        xs.push(x0.to_vec());
        for layer in &self.layers {
            let xl = xs.last().expect("non-empty");
            let s = dot(xl, &layer.weight.value);
            let next: Vec<f64> = x0
                .iter()
                .zip(&layer.bias.value)
                .zip(xl)
                .map(|((x, b), l)| x * s + b + l)
                .collect();
            scalars.push(s);
            xs.push(next);
        }
        Ok(CrossStackCache { xs, scalars })
    }

    /// Accumulates parameter gradients and returns the gradient on `x0`.
    pub fn backward_into(
        &self,
        cache: &CrossStackCache,
        d_out: &[f64],
        grads: &mut CrossGrads,
    ) -> Result<Vec<f64>> {
        check_widths("cross stack upstream", self.width, &[d_out.len()])?;
        let x0 = &cache.xs[0];
        let mut g = d_out.to_vec();
        let mut d_x0 = vec![0.0; self.width];
        for li in (0..self.layers.len()).rev() {
            let xl = &cache.xs[li];
            let s = cache.scalars[li];
            let t = dot(&g, x0);
            let w = &self.layers[li].weight.value;
            for i in 0..self.width {
                grads.bias[li][i] += g[i];
                grads.weight[li][i] += t * xl[i];
                d_x0[i] += g[i] * s;
            }
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi += t * wi;
            }
        }
        for (d, gi) in d_x0.iter_mut().zip(&g) {
            *d += gi;
        }
        Ok(d_x0)
    }

    pub fn apply_adagrad(&mut self, name: &str, grads: &CrossGrads, opt: &Adagrad, scale: f64) -> Result<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            opt.step(&format!("{name}.{i}.w"), &mut l.weight.value, &grads.weight[i], &mut l.weight.accum, scale)?;
            opt.step(&format!("{name}.{i}.b"), &mut l.bias.value, &grads.bias[i], &mut l.bias.accum, scale)?;
        }
        Ok(())
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.w"), &l.weight));
            out.push((format!("{prefix}.{i}.b"), &l.bias));
        }
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.{i}.w"), &mut l.weight));
            out.push((format!("{prefix}.{i}.b"), &mut l.bias));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_pass_through() {
        let x0 = [0.4, -1.0, 2.0];
        let xl = [1.0, 2.0, 3.0];
        assert_eq!(cross_layer(&x0, &xl, &[0.0; 3], &[0.0; 3]).unwrap(), xl.to_vec());
    }

    #[test]
    fn hand_arithmetic() {
        let out = cross_layer(&[1.0, 1.0], &[1.0, 2.0], &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(out, vec![2.0, 3.0]);
    }

    #[test]
    fn width_mismatch_rejected() {
        assert!(cross_layer(&[1.0], &[1.0, 2.0], &[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    /// Loss = c . cross(x0, xl, w, b) for a fixed vector c.
    #[test]
    fn single_layer_gradient_vs_finite_differences() {
        let x0 = vec![0.3, -0.7, 1.1];
        let xl = vec![0.5, 0.2, -0.4];
        let w = vec![0.9, -0.3, 0.6];
        let b = vec![0.1, 0.0, -0.2];
        let c = vec![1.0, -2.0, 0.5];
        let loss = |x0: &[f64], xl: &[f64], w: &[f64], b: &[f64]| {
            dot(&cross_layer(x0, xl, w, b).unwrap(), &c)
        };
        let (dx0, dxl, dw, db) = cross_backward(&x0, &xl, &w, &c).unwrap();
        let eps = 1e-5;
        let inputs = [&x0, &xl, &w, &b];
        let analytic = [&dx0, &dxl, &dw, &db];
        for which in 0..4 {
            for i in 0..3 {
                let mut plus: Vec<Vec<f64>> = inputs.iter().map(|v| v.to_vec()).collect();
                let mut minus = plus.clone();
                plus[which][i] += eps;
                minus[which][i] -= eps;
                let fd = (loss(&plus[0], &plus[1], &plus[2], &plus[3])
                    - loss(&minus[0], &minus[1], &minus[2], &minus[3]))
                    / (2.0 * eps);
                assert!(relative_error(analytic[which][i], fd) <= 1e-4);
            }
        }
    }

    #[test]
    fn stack_backward_vs_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut stack = CrossStack::new(4, 3, &mut rng);
        for l in &mut stack.layers {
            l.bias.value = (0..4).map(|_| rng.random_range(-0.3..0.3)).collect();
        }
        let x0: Vec<f64> = vec![0.2, -0.5, 0.8, 0.1];
        let c = vec![0.3, 1.0, -0.6, 0.4];
        let loss = |s: &CrossStack, x: &[f64]| dot(s.forward(x).unwrap().output(), &c);
        let cache = stack.forward(&x0).unwrap();
        let mut grads = CrossGrads::zeros_like(&stack);
        let d_x0 = stack.backward_into(&cache, &c, &mut grads).unwrap();
        let eps = 1e-5;
        for i in 0..4 {
            let (mut p, mut m) = (x0.clone(), x0.clone());
            p[i] += eps;
            m[i] -= eps;
            let fd = (loss(&stack, &p) - loss(&stack, &m)) / (2.0 * eps);
            assert!(relative_error(d_x0[i], fd) <= 1e-4);
        }
        let mut flat = Vec::new();
        grads.flatten_into(&mut flat);
        let n = flat.len();
        for k in 0..n {
            let mut blocks = Vec::new();
            let mut s2 = stack.clone();
            s2.params_mut("x", &mut blocks);
            let orig = crate::nnet::flat_get(
                &blocks.iter().map(|(n, p)| (n.clone(), &**p)).collect::<Vec<_>>(),
                k,
            )
            .unwrap()
            .1;
            crate::nnet::flat_set(&mut blocks, k, orig + eps);
            let lp = loss(&s2, &x0);
            let mut blocks = Vec::new();
            s2.params_mut("x", &mut blocks);
            crate::nnet::flat_set(&mut blocks, k, orig - eps);
            let lm = loss(&s2, &x0);
            let fd = (lp - lm) / (2.0 * eps);
            assert!(relative_error(flat[k], fd) <= 1e-4, "param {k}");
        }
    }
}
