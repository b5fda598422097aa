//! Dense layers with hand-written backpropagation and an Adam optimizer.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Elu => z.mapv_inplace(|v| if v > 0.0 { v } else { v.exp_m1() }),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the output `y`.
    fn backprop(self, y: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Elu => grad.zip_mut_with(y, |g, &y| {
                if y <= 0.0 {
                    *g *= y + 1.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(y, |g, &y| *g *= 1.0 - y * y),
            Activation::Identity => {}
        }
    }
}

/// Visits named flat parameter tensors in a fixed order.
#[allow(clippy::type_complexity)]
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, d| n += d.len());
        n
    }

    fn fill_zero(&mut self) {
        self.visit_mut("", &mut |_, _, d| d.fill(0.0));
    }

    /// Adds `other`, which must have identical structure.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let mut src = Vec::new();
        other.visit("", &mut |_, _, d| src.push(d.to_vec()));
        let mut it = src.into_iter();
        self.visit_mut("", &mut |_, _, d| {
            let s = it.next().expect("matching structure");
            d.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        });
    }

    /// Every value in visiting order.
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit("", &mut |_, _, d| out.extend_from_slice(d));
        out
    }

    /// Overwrites every value in visiting order.
    fn load_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "flat parameter length");
        let mut i = 0;
        self.visit_mut("", &mut |_, _, d| {
            d.copy_from_slice(&values[i..i + d.len()]);
            i += d.len();
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, d| ok &= d.iter().all(|v| v.is_finite()));
        ok
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(in, out)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let k = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-k..k)),
            b: Array1::from_shape_fn(fan_out, |_| rng.random_range(-k..k)),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.w.nrows(), self.w.ncols())
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dz: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(dz);
        grad.b += &dz.sum_axis(Axis(0));
        dz.dot(&self.w.t())
    }
}

impl Parameters for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "w"), self.w.shape(), self.w.as_slice().expect("standard layout"));
        f(&join(prefix, "b"), self.b.shape(), self.b.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = self.w.shape().to_vec();
        f(&join(prefix, "w"), &shape, self.w.as_slice_mut().expect("standard layout"));
        let shape = self.b.shape().to_vec();
        f(&join(prefix, "b"), &shape, self.b.as_slice_mut().expect("standard layout"));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Layer inputs and activated outputs from one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Array2<f64>,
    outputs: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().unwrap_or(&self.input)
    }
}

impl Mlp {
    /// `dims` lists every width from input to output; `dims.len() - 1` layers.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        Mlp {
            layers: dims.windows(2).map(|d| Linear::new(d[0], d[1], rng)).collect(),
            hidden,
            output,
        }
    }

    /// Input, `layers - 1` hidden layers of width `width`, output.
    pub fn uniform<R: Rng + ?Sized>(
        input: usize,
        width: usize,
        output: usize,
        layers: usize,
        hidden: Activation,
        out_act: Activation,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(width, layers.saturating_sub(1)));
        dims.push(output);
        Self::new(&dims, hidden, out_act, rng)
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
            hidden: self.hidden,
            output: self.output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h);
            self.activation(i).apply(&mut h);
        }
        h
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> MlpCache {
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let mut h = l.forward(outputs.last().unwrap_or(x));
            self.activation(i).apply(&mut h);
            outputs.push(h);
        }
        MlpCache { input: x.clone(), outputs }
    }

    /// Accumulates into `grad` and returns the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            self.activation(i).backprop(&cache.outputs[i], &mut g);
            let x = if i == 0 { &cache.input } else { &cache.outputs[i - 1] };
            g = self.layers[i].backward(x, &g, &mut grad.layers[i]);
        }
        g
    }
}

impl Parameters for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with per-tensor moments keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    moments: std::collections::HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            moments: Default::default(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates every tensor whose name passes `trainable`; others are left
    /// untouched bit for bit.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, trainable: &dyn Fn(&str) -> bool) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        let mut gs: Vec<(String, Vec<f64>)> = Vec::new();
        grads.visit("", &mut |name, _, d| {
            if trainable(name) {
                gs.push((name.to_string(), d.to_vec()));
            }
        });
        let mut it = gs.into_iter();
        let moments = &mut self.moments;
        params.visit_mut("", &mut |name, _, p| {
            if !trainable(name) {
                return;
            }
            let (gname, g) = it.next().expect("gradient structure matches parameters");
            assert_eq!(gname, name, "gradient structure matches parameters");
            let (m, v) = moments
                .entry(gname)
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        });
    }
}
