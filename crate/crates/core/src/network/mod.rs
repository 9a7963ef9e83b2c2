//! A small MLP denoiser with EDM preconditioning.
//!
//! `D(x, sigma) = c_skip x + c_out F(c_in x, c_noise)` where `F` is a plain MLP
//! whose input is the scaled sample with `c_noise = ln(sigma) / 4` appended.
//! Parameters live in one flat vector, layer by layer, each layer stored as a
//! row-major `(fan_in, fan_out)` weight block followed by its bias.

mod adam;
mod checkpoint;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::StreamRng;

pub use adam::{adam_step, Adam};
pub use checkpoint::CHECKPOINT_MAGIC;

/// Hidden-layer count used by every shipped configuration.
pub const DEFAULT_HIDDEN_LAYERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `z * sigmoid(z)`.
    #[default]
    Silu,
    Tanh,
}

impl Activation {
    /// Value and derivative at `z`.
    #[inline]
    fn eval(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                (z * s, s * (1.0 + z * (1.0 - s)))
            }
            Activation::Tanh => {
                let t = z.tanh();
                (t, 1.0 - t * t)
            }
        }
    }
}

/// EDM preconditioning coefficients at one noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
    /// Loss weight `lambda(sigma)`, which makes `lambda c_out^2 = 1`.
    pub weight: f64,
}

impl Preconditioning {
    pub fn new(sigma: f64, sigma_data: f64) -> Self {
        let s2 = sigma * sigma;
        let d2 = sigma_data * sigma_data;
        let total = s2 + d2;
        Self {
            c_skip: d2 / total,
            c_out: sigma * sigma_data / total.sqrt(),
            c_in: 1.0 / total.sqrt(),
            c_noise: sigma.ln() / 4.0,
            weight: total / (s2 * d2),
        }
    }
}

/// Architecture and initialization of a [`Denoiser`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub width: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default)]
    pub activation: Activation,
}

fn default_hidden_layers() -> usize {
    DEFAULT_HIDDEN_LAYERS
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { width: 256, hidden_layers: DEFAULT_HIDDEN_LAYERS, activation: Activation::Silu }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    sizes: Vec<usize>,
    params: Vec<f64>,
    sigma_data: f64,
    seed: u64,
    activation: Activation,
}

/// Activations and activation derivatives kept from a forward pass.
struct Trace {
    /// `inputs[l]` feeds layer `l`; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Activation derivative at each hidden layer.
    slopes: Vec<Array2<f64>>,
    output: Array2<f64>,
}

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = vec![0];
    for w in sizes.windows(2) {
        let last = *offsets.last().expect("non-empty");
        offsets.push(last + w[0] * w[1] + w[1]);
    }
    offsets
}

impl Denoiser {
    /// LeCun-normal hidden weights (`N(0, 1/fan_in)`), zero biases and a
    /// zero output layer, so a fresh model returns `c_skip x`.
    pub fn new(dim: usize, config: &NetworkConfig, sigma_data: f64, seed: u64) -> Result<Self> {
        if dim == 0 || config.width == 0 || config.hidden_layers == 0 {
            return Err(Error::InvalidConfig("network needs dim, width and depth > 0".into()));
        }
        if !(sigma_data > 0.0) || !sigma_data.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma_data must be positive, got {sigma_data}")));
        }
        let mut sizes = vec![dim + 1];
        sizes.extend(std::iter::repeat_n(config.width, config.hidden_layers));
        sizes.push(dim);
        let offsets = layer_offsets(&sizes);
        let mut params = vec![0.0; *offsets.last().expect("non-empty")];
        let mut rng = <StreamRng as rand::SeedableRng>::seed_from_u64(seed);
        for l in 0..sizes.len() - 2 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[offsets[l]..offsets[l] + fan_in * fan_out] {
                *p = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(Self { sizes, params, sigma_data, seed, activation: config.activation })
    }

    pub(crate) fn from_parts(
        sizes: Vec<usize>,
        params: Vec<f64>,
        sigma_data: f64,
        seed: u64,
        activation: Activation,
    ) -> Result<Self> {
        if sizes.len() < 3 || sizes[0] != sizes[sizes.len() - 1] + 1 {
            return Err(Error::Format(format!("invalid layer sizes {sizes:?}")));
        }
        check_dim(*layer_offsets(&sizes).last().expect("non-empty"), params.len())?;
        Ok(Self { sizes, params, sigma_data, seed, activation })
    }

    pub fn dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    /// Changes `sigma_data`; the weights are kept.
    pub fn set_sigma_data(&mut self, sigma_data: f64) -> Result<()> {
        if !(sigma_data > 0.0) || !sigma_data.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma_data must be positive, got {sigma_data}")));
        }
        self.sigma_data = sigma_data;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn precond(&self, sigma: f64) -> Preconditioning {
        Preconditioning::new(sigma, self.sigma_data)
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let off = layer_offsets(&self.sizes)[l];
        let w = ArrayView2::from_shape((fan_in, fan_out), &self.params[off..off + fan_in * fan_out])
            .expect("layer shape");
        let b = ArrayView1::from(&self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out]);
        (w, b)
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Raw MLP pass; keeps what backprop and forward-mode need.
    fn mlp(&self, input: Array2<f64>) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers());
        let mut slopes = Vec::with_capacity(self.layers() - 1);
        let mut a = input;
        for l in 0..self.layers() - 1 {
            let (w, b) = self.layer(l);
            let mut z = a.dot(&w);
            z += &b;
            let mut slope = Array2::zeros(z.raw_dim());
            let act = self.activation;
            Zip::from(&mut z).and(&mut slope).for_each(|z, d| {
                let (v, dv) = act.eval(*z);
                *z = v;
                *d = dv;
            });
            inputs.push(a);
            slopes.push(slope);
            a = z;
        }
        let (w, b) = self.layer(self.layers() - 1);
        let mut output = a.dot(&w);
        output += &b;
        inputs.push(a);
        Trace { inputs, slopes, output }
    }

    /// Network input rows `[c_in x, c_noise]`, one noise level per row.
    fn network_input(&self, x: ArrayView2<f64>, pre: &[Preconditioning]) -> Array2<f64> {
        let (n, d) = x.dim();
        let mut input = Array2::zeros((n, d + 1));
        for (i, p) in pre.iter().enumerate() {
            let mut row = input.row_mut(i);
            row.slice_mut(s![..d]).assign(&(&x.row(i) * p.c_in));
            row[d] = p.c_noise;
        }
        input
    }

    fn check_input(&self, x: ArrayView2<f64>, sigma: f64) -> Result<()> {
        check_dim(self.dim(), x.ncols())?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("noise level must be positive, got {sigma}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("denoiser input".into()));
        }
        Ok(())
    }

    /// Denoised means of the rows of `x`, all at noise level `sigma`.
    pub fn forward_batch(&self, x: ArrayView2<f64>, sigma: f64) -> Result<Array2<f64>> {
        Ok(self.forward_with_jvps(x, sigma, &[])?.0)
    }

    /// Denoised means and directional derivatives `J_D(x) v` for each tangent
    /// matrix in `tangents` (row `i` is the direction at `x[i]`).
    pub fn forward_with_jvps(
        &self,
        x: ArrayView2<f64>,
        sigma: f64,
        tangents: &[ArrayView2<f64>],
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        self.check_input(x, sigma)?;
        let p = self.precond(sigma);
        let n = x.nrows();
        let trace = self.mlp(self.network_input(x, &vec![p; n]));
        let mut out = trace.output.clone();
        out *= p.c_out;
        out.scaled_add(p.c_skip, &x);
        let mut jvps = Vec::with_capacity(tangents.len());
        for v in tangents {
            check_dim(n, v.nrows())?;
            check_dim(self.dim(), v.ncols())?;
            let d = self.dim();
            let mut t = Array2::zeros((n, d + 1));
            t.slice_mut(s![.., ..d]).assign(&(v * p.c_in));
            for l in 0..self.layers() - 1 {
                let (w, _) = self.layer(l);
                t = t.dot(&w) * &trace.slopes[l];
            }
            let (w, _) = self.layer(self.layers() - 1);
            let mut jvp = t.dot(&w);
            jvp *= p.c_out;
            jvp.scaled_add(p.c_skip, v);
            jvps.push(jvp);
        }
        Ok((out, jvps))
    }

    /// Denoised mean of a single sample.
    pub fn forward(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Format(e.to_string()))?;
        Ok(self.forward_batch(x, sigma)?.into_raw_vec_and_offset().0)
    }

    /// Directional derivative of `forward(., sigma)` at `x` along `v`.
    pub fn input_jvp(&self, x: &[f64], sigma: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(x.len(), v.len())?;
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Format(e.to_string()))?;
        let vv = ArrayView2::from_shape((1, v.len()), v).map_err(|e| Error::Format(e.to_string()))?;
        let (_, mut j) = self.forward_with_jvps(xv, sigma, &[vv])?;
        Ok(j.pop().expect("one tangent").into_raw_vec_and_offset().0)
    }

    /// Weighted denoising loss `mean_i lambda_i |D(x0_i + sigma_i eps_i) - x0_i|^2`
    /// and its exact gradient with respect to every parameter.
    pub fn loss_and_param_grads(
        &self,
        clean: ArrayView2<f64>,
        sigmas: &[f64],
        noise: ArrayView2<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        let (n, d) = clean.dim();
        if n == 0 {
            return Err(Error::Empty("training batch".into()));
        }
        check_dim(self.dim(), d)?;
        check_dim(n, sigmas.len())?;
        check_dim(n, noise.nrows())?;
        check_dim(d, noise.ncols())?;
        let pre: Vec<Preconditioning> = sigmas.iter().map(|&s| self.precond(s)).collect();
        let mut noisy = noise.to_owned();
        for (mut row, (&sigma, c)) in noisy.outer_iter_mut().zip(sigmas.iter().zip(clean.outer_iter())) {
            row *= sigma;
            row += &c;
        }
        let trace = self.mlp(self.network_input(noisy.view(), &pre));

        // Residuals and d loss / d F.
        let mut loss = 0.0;
        let mut upstream = trace.output;
        for i in 0..n {
            let p = pre[i];
            let mut r = upstream.row_mut(i);
            let mut ss = 0.0;
            for j in 0..d {
                let resid = p.c_skip * noisy[[i, j]] + p.c_out * r[j] - clean[[i, j]];
                ss += resid * resid;
                r[j] = 2.0 * p.weight * p.c_out * resid / n as f64;
            }
            loss += p.weight * ss;
        }
        loss /= n as f64;

        let offsets = layer_offsets(&self.sizes);
        let mut grads = vec![0.0; self.params.len()];
        for l in (0..self.layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let (gw, gb) = grads[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let gw_view = trace.inputs[l].t().dot(&upstream);
            gw.copy_from_slice(gw_view.as_standard_layout().as_slice().expect("contiguous"));
            let gb_view: Array1<f64> = upstream.sum_axis(Axis(0));
            gb.copy_from_slice(gb_view.as_slice().expect("contiguous"));
            if l > 0 {
                let (w, _) = self.layer(l);
                upstream = upstream.dot(&w.t()) * &trace.slopes[l - 1];
            }
        }
        Ok((loss, grads))
    }

    /// Deep copy used to seed a colder model from a warmer one.
    pub fn clone_weights(&self) -> Denoiser {
        self.clone()
    }
}
