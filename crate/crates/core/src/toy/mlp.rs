//! Dense feed-forward network with manual backpropagation and Adam.
//!
//! Generic over the float type so gradient checks can run the exact same code
//! in `f64` that training runs in `f32`.

use ndarray::{Array1, Array2, ArrayView2, Axis, NdFloat};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::Uniform;

/// Hidden-layer nonlinearity; the output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    fn apply<F: NdFloat>(self, z: F) -> F {
        match self {
            Self::Silu => z / (F::one() + (-z).exp()),
            Self::Tanh => z.tanh(),
        }
    }

    fn derivative<F: NdFloat>(self, z: F) -> F {
        match self {
            Self::Silu => {
                let s = F::one() / (F::one() + (-z).exp());
                s * (F::one() + z * (F::one() - s))
            }
            Self::Tanh => {
                let t = z.tanh();
                F::one() - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    /// `(in, out)`.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    layers: Vec<Dense<F>>,
    activation: Activation,
}

/// Per-layer pre-activations and outputs of one batched forward pass.
#[derive(Debug)]
pub struct ForwardCache<F> {
    input: Array2<F>,
    pre: Vec<Array2<F>>,
    post: Vec<Array2<F>>,
}

impl<F: Clone> ForwardCache<F> {
    pub fn output(&self) -> &Array2<F> {
        self.post.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub weights: Vec<Array2<F>>,
    pub biases: Vec<Array1<F>>,
}

impl<F: NdFloat + FromPrimitive> Mlp<F> {
    /// Random init: weights uniform with variance `1 / fan_in`, zero biases.
    pub fn init<R: Rng>(widths: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = (3.0 / w[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let weight = Array2::from_shape_fn((w[0], w[1]), |_| {
                    F::from_f64(rng.sample(dist)).expect("representable")
                });
                Dense {
                    weight,
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self { layers, activation }
    }

    pub fn from_layers(layers: Vec<Dense<F>>, activation: Activation) -> Self {
        assert!(!layers.is_empty());
        Self { layers, activation }
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.ncols()
    }

    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.weight.ncols()));
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Output only, no cache.
    pub fn forward(&self, input: ArrayView2<F>) -> Array2<F> {
        let last = self.layers.len() - 1;
        let mut h = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        h
    }

    pub fn forward_cached(&self, input: ArrayView2<F>) -> ForwardCache<F> {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<F>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = if i == 0 { input } else { post[i - 1].view() };
            let mut z = prev.dot(&layer.weight);
            z += &layer.bias;
            let a = if i < last {
                let act = self.activation;
                z.mapv(|v| act.apply(v))
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a);
        }
        ForwardCache {
            input: input.to_owned(),
            pre,
            post,
        }
    }

    /// Parameter gradients given `d_output = dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache<F>, d_output: &Array2<F>) -> Gradients<F> {
        let n = self.layers.len();
        let mut weights = vec![Array2::zeros((0, 0)); n];
        let mut biases = vec![Array1::zeros(0); n];
        let mut delta = d_output.clone();
        for i in (0..n).rev() {
            if i < n - 1 {
                let act = self.activation;
                delta.zip_mut_with(&cache.pre[i], |d, &z| *d *= act.derivative(z));
            }
            let prev = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            weights[i] = prev.t().dot(&delta).as_standard_layout().into_owned();
            biases[i] = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&self.layers[i].weight.t());
            }
        }
        Gradients { weights, biases }
    }

    pub fn cast<G: NdFloat + FromPrimitive>(&self) -> Mlp<G>
    where
        F: Into<f64>,
    {
        let conv = |v: &F| G::from_f64((*v).into()).expect("representable");
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.map(conv),
                    bias: l.bias.map(conv),
                })
                .collect(),
            activation: self.activation,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub learning_rate: F,
    beta1: F,
    beta2: F,
    epsilon: F,
    step: i32,
    m: Gradients<F>,
    v: Gradients<F>,
}

impl<F: NdFloat + FromPrimitive> Adam<F> {
    pub fn new(mlp: &Mlp<F>, learning_rate: F) -> Self {
        let zeros = || Gradients {
            weights: mlp
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weight.raw_dim()))
                .collect(),
            biases: mlp
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        };
        Self {
            learning_rate,
            beta1: F::from_f64(0.9).unwrap(),
            beta2: F::from_f64(0.999).unwrap(),
            epsilon: F::from_f64(1e-8).unwrap(),
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, mlp: &mut Mlp<F>, grads: &Gradients<F>) {
        self.step += 1;
        let one = F::one();
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = one - Float::powi(b1, self.step);
        let c2 = one - Float::powi(b2, self.step);
        let lr = self.learning_rate;
        for (i, layer) in mlp.layers.iter_mut().enumerate() {
            adam_slice(
                layer.weight.as_slice_mut().expect("contiguous"),
                grads.weights[i].as_slice().expect("contiguous"),
                self.m.weights[i].as_slice_mut().expect("contiguous"),
                self.v.weights[i].as_slice_mut().expect("contiguous"),
                (b1, b2, eps, c1, c2, lr),
            );
            adam_slice(
                layer.bias.as_slice_mut().expect("contiguous"),
                grads.biases[i].as_slice().expect("contiguous"),
                self.m.biases[i].as_slice_mut().expect("contiguous"),
                self.v.biases[i].as_slice_mut().expect("contiguous"),
                (b1, b2, eps, c1, c2, lr),
            );
        }
    }
}

fn adam_slice<F: NdFloat>(
    params: &mut [F],
    grads: &[F],
    m: &mut [F],
    v: &mut [F],
    (b1, b2, eps, c1, c2, lr): (F, F, F, F, F, F),
) {
    let one = F::one();
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + (one - b1) * g;
        *vi = b2 * *vi + (one - b2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mse<F: NdFloat>(out: &Array2<F>, target: &Array2<F>) -> F {
        let n = F::from(out.len()).unwrap();
        out.iter()
            .zip(target)
            .map(|(&o, &t)| (o - t) * (o - t))
            .fold(F::zero(), |a, b| a + b)
            / n
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp: Mlp<f64> = Mlp::init(&[5, 7, 6, 3], Activation::Silu, &mut rng);
        let x = Array2::from_shape_fn((4, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
        let y = Array2::from_shape_fn((4, 3), |(i, j)| ((i + 2 * j) as f64 * 0.21).cos());
        let cache = mlp.forward_cached(x.view());
        let n = y.len() as f64;
        let d_out = (cache.output() - &y).mapv(|v| 2.0 * v / n);
        let grads = mlp.backward(&cache, &d_out);
        let h = 1e-6;
        for layer in 0..3 {
            for (r, c) in [(0, 0), (1, 2), (2, 1)] {
                let mut plus = mlp.clone();
                plus.layers_mut()[layer].weight[(r, c)] += h;
                let mut minus = mlp.clone();
                minus.layers_mut()[layer].weight[(r, c)] -= h;
                let fd = (mse(&plus.forward(x.view()), &y) - mse(&minus.forward(x.view()), &y)) / (2.0 * h);
                let an = grads.weights[layer][(r, c)];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                    "layer {layer}: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn tanh_derivative() {
        let z = 0.3f64;
        let h = 1e-6;
        let fd = (Activation::Tanh.apply(z + h) - Activation::Tanh.apply(z - h)) / (2.0 * h);
        assert!((fd - Activation::Tanh.derivative(z)).abs() < 1e-8);
    }

    #[test]
    fn adam_fits_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mlp: Mlp<f32> = Mlp::init(&[2, 1], Activation::Silu, &mut rng);
        let x = array![[0.0f32, 1.0], [1.0, 0.0], [1.0, 1.0], [0.5, -0.5]];
        let y = x
            .map_axis(Axis(1), |r| 2.0 * r[0] - r[1] + 0.5)
            .insert_axis(Axis(1));
        let mut opt = Adam::new(&mlp, 0.05);
        for _ in 0..2000 {
            let cache = mlp.forward_cached(x.view());
            let d = (cache.output() - &y).mapv(|v| 2.0 * v / 4.0);
            let g = mlp.backward(&cache, &d);
            opt.update(&mut mlp, &g);
        }
        assert!(mse(&mlp.forward(x.view()), &y) < 1e-5);
    }

    #[test]
    fn cast_preserves_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp: Mlp<f32> = Mlp::init(&[3, 4, 2], Activation::Silu, &mut rng);
        let wide: Mlp<f64> = mlp.cast();
        let x = array![[0.1f32, 0.2, 0.3]];
        let a = mlp.forward(x.view());
        let b = wide.forward(x.mapv(|v| v as f64).view());
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((*u as f64 - v).abs() < 1e-6);
        }
        assert_eq!(mlp.parameter_count(), 3 * 4 + 4 + 4 * 2 + 2);
    }
}
