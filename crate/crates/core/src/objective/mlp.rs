//! Teacher-student regression with tanh MLPs and hand-written backprop.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::seed::stream_rng;

/// Dense layer shapes of a tanh MLP with a scalar linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpShape {
    pub sizes: Vec<usize>,
}

impl MlpShape {
    pub fn new(input_dim: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self { sizes }
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `N(0, scale^2 / fan_in)` weights, zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R, scale: f64) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.param_count());
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = scale / (fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            params.extend((0..fan_in * fan_out).map(|_| normal.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        params
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> f64 {
        let mut act = x.to_vec();
        let mut offset = 0;
        let layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut next: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    row.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>() + bias[o]
                })
                .collect();
            if l + 1 < layers {
                next.iter_mut().for_each(|z| *z = z.tanh());
            }
            act = next;
        }
        act[0]
    }

    /// Adds `d(0.5 (f(x) - y)^2)/d params * weight` into `grad`; returns the
    /// per-sample loss.
    pub fn accumulate_grad(&self, params: &[f64], x: &[f64], y: f64, weight: f64, grad: &mut [f64]) -> f64 {
        let layers = self.sizes.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        let mut offsets = Vec::with_capacity(layers);
        acts.push(x.to_vec());
        let mut offset = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            offsets.push(offset);
            let weights = &params[offset..offset + n_in * n_out];
            let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let prev = &acts[l];
            let mut next: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>() + bias[o]
                })
                .collect();
            if l + 1 < layers {
                next.iter_mut().for_each(|z| *z = z.tanh());
            }
            acts.push(next);
        }
        let residual = acts[layers][0] - y;
        let mut delta = vec![residual];
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let prev = &acts[l];
            for o in 0..n_out {
                let d = delta[o] * weight;
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(prev) {
                    *g += d * a;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let weights = &params[off..off + n_in * n_out];
                delta = (0..n_in)
                    .map(|i| {
                        let back: f64 = (0..n_out).map(|o| weights[o * n_in + i] * delta[o]).sum();
                        back * (1.0 - prev[i] * prev[i])
                    })
                    .collect();
            }
        }
        0.5 * residual * residual
    }
}

/// Frozen random teacher plus the student architecture.
#[derive(Debug, Clone)]
pub struct MlpTask {
    pub student: MlpShape,
    teacher: MlpShape,
    teacher_params: Vec<f64>,
    teacher_scale: f64,
    pub init_scale: f64,
}

impl MlpTask {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        teacher_hidden: &[usize],
        teacher_scale: f64,
        teacher_seed: u64,
        init_scale: f64,
    ) -> Self {
        let teacher = MlpShape::new(input_dim, teacher_hidden);
        let mut rng = stream_rng(teacher_seed, "mlp-teacher", &[]);
        let mut teacher_params = teacher.init(&mut rng, 1.0);
        // nonzero teacher biases so targets are not odd functions of x
        let mut offset = 0;
        for w in teacher.sizes.windows(2) {
            offset += w[0] * w[1];
            for b in &mut teacher_params[offset..offset + w[1]] {
                *b = 0.5 * rng.sample::<f64, _>(StandardNormal);
            }
            offset += w[1];
        }
        Self {
            student: MlpShape::new(input_dim, hidden),
            teacher,
            teacher_params,
            teacher_scale,
            init_scale,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.student.sizes[0]
    }

    pub fn target(&self, x: &[f64]) -> f64 {
        self.teacher_scale * self.teacher.forward(&self.teacher_params, x)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let d = self.input_dim();
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let ys = xs.iter().map(|x| self.target(x)).collect();
        (xs, ys)
    }

    pub fn loss_and_grad(&self, params: &[f64], xs: &[Vec<f64>], ys: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; params.len()];
        let n = xs.len().max(1) as f64;
        let w = 1.0 / n;
        let loss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| self.student.accumulate_grad(params, x, y, w, &mut grad))
            .sum();
        (loss / n, grad)
    }

    pub fn loss(&self, params: &[f64], xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let n = xs.len().max(1) as f64;
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| {
                let r = self.student.forward(params, x) - y;
                0.5 * r * r
            })
            .sum::<f64>()
            / n
    }
}
