use rand::Rng;

use super::Params;

/// Flat parameter layout of a ReLU MLP: for each layer, a row-major
/// `out × in` weight block followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayout {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    n_params: usize,
}

/// Activations of one forward pass; `acts[0]` is the input.
pub struct Pass {
    acts: Vec<Vec<f64>>,
}

impl Pass {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }
}

impl MlpLayout {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut n = 0;
        for w in sizes.windows(2) {
            offsets.push(n);
            n += w[0] * w[1] + w[1];
        }
        MlpLayout { sizes, offsets, n_params: n }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_layers(&self) -> usize {
        self.offsets.len()
    }

    /// Parameter index range of layer `l` (weights then biases).
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        self.offsets[l]..self.offsets[l] + i * o + o
    }

    /// He-uniform weights `U(±√(6/fan_in))`, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Params {
        let mut p = vec![0.0; self.n_params];
        for l in 0..self.n_layers() {
            let (fan_in, out) = (self.sizes[l], self.sizes[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let off = self.offsets[l];
            for w in &mut p[off..off + fan_in * out] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Params::from(p)
    }

    pub fn forward(&self, p: &[f64], input: &[f64]) -> Pass {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let (weights, biases) = p[off..off + n_in * n_out + n_out].split_at(n_in * n_out);
            let x = &acts[l];
            let mut out = biases.to_vec();
            for (o, y) in out.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                *y += row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
                if l != last && *y < 0.0 {
                    *y = 0.0;
                }
            }
            acts.push(out);
        }
        Pass { acts }
    }

    /// Reverse-mode accumulation of `scale · ∂ output[k] / ∂θ` into `grad`.
    pub fn backward(&self, p: &[f64], pass: &Pass, k: usize, scale: f64, grad: &mut [f64]) {
        let mut delta = vec![0.0; *self.sizes.last().expect("sizes")];
        delta[k] = scale;
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let x = &pass.acts[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[off + n_in * n_out + o] += d;
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            let weights = &p[off..off + n_in * n_out];
            let mut next = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (n, w) in next.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                    *n += w * d;
                }
            }
            // ReLU derivative: active units have positive output.
            for (n, &a) in next.iter_mut().zip(x) {
                if a <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
    }
}
