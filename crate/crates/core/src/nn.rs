//! Dense feed-forward value network: rectified-linear hidden layers, linear
//! output, manual backpropagation and SGD / Adam updates in `f64`.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "deepcars-mlp";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layer_dims: Vec<usize>,
    /// `weights[k]` is row-major `layer_dims[k+1] x layer_dims[k]`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Gradients share the parameter layout.
pub type MlpGrads = MlpParams;

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Shape(format!(
            "need at least input and output layers, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Shape(format!("zero-width layer in {dims:?}")));
    }
    Ok(())
}

/// Fan-in scaled uniform weights, zero biases.
pub fn init_params(layer_dims: &[usize], seed: u64) -> Result<MlpParams> {
    check_dims(layer_dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        weights.push(
            (0..fan_in * fan_out)
                .map(|_| rng.random_range(-scale..scale))
                .collect(),
        );
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpParams {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
    })
}

impl MlpParams {
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights: layer_dims
                .windows(2)
                .map(|p| vec![0.0; p[0] * p[1]])
                .collect(),
            biases: layer_dims[1..].iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layer_dims: self.layer_dims.clone(),
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_len(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// All parameters in layer order (weights then biases per layer).
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Hash of the exact bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.layer_dims.hash(&mut h);
        for v in self.iter() {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "input has {} entries, network expects {}",
                input.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut act = input.to_vec();
        let last = self.num_layers() - 1;
        for k in 0..=last {
            act = self.affine(k, &act);
            if k < last {
                relu_in_place(&mut act);
            }
        }
        Ok(act)
    }

    fn affine(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let n_in = self.layer_dims[k];
        self.weights[k]
            .chunks_exact(n_in)
            .zip(&self.biases[k])
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
            .collect()
    }

    /// Layer inputs for every layer plus the final output.
    fn forward_trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let last = self.num_layers() - 1;
        let mut trace = Vec::with_capacity(self.num_layers() + 1);
        trace.push(input.to_vec());
        for k in 0..=last {
            let mut z = self.affine(k, &trace[k]);
            if k < last {
                relu_in_place(&mut z);
            }
            trace.push(z);
        }
        trace
    }

    /// Gradient of `output_gradient . f(input)` with respect to every
    /// parameter.
    pub fn backward(&self, input: &[f64], output_gradient: &[f64]) -> Result<MlpGrads> {
        let mut grads = self.zeros_like();
        self.backward_into(input, output_gradient, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward) but adds into `grads`. Returns the
    /// network output as a by-product.
    pub fn backward_into(
        &self,
        input: &[f64],
        output_gradient: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        self.check_input(input)?;
        if output_gradient.len() != self.output_len() {
            return Err(Error::Shape(format!(
                "output gradient has {} entries, network outputs {}",
                output_gradient.len(),
                self.output_len()
            )));
        }
        if grads.layer_dims != self.layer_dims {
            return Err(Error::Shape(format!(
                "gradient buffer dims {:?} differ from {:?}",
                grads.layer_dims, self.layer_dims
            )));
        }
        let mut trace = self.forward_trace(input);
        let output = trace.pop().unwrap();

        // delta = dL/dz for the current layer's pre-activation
        let mut delta = output_gradient.to_vec();
        for k in (0..self.num_layers()).rev() {
            let x = &trace[k];
            let n_in = self.layer_dims[k];
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.biases[k][i] += d;
                let row = &mut grads.weights[k][i * n_in..(i + 1) * n_in];
                for (g, &xj) in row.iter_mut().zip(x) {
                    *g += d * xj;
                }
            }
            if k == 0 {
                break;
            }
            let mut prev = vec![0.0; n_in];
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &self.weights[k][i * n_in..(i + 1) * n_in];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // x is the post-ReLU activation of layer k-1; zero means inactive
            for (p, &a) in prev.iter_mut().zip(x) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(output)
    }

    /// Makes `target` a bit-exact copy of `self`.
    pub fn clone_into(&self, target: &mut MlpParams) -> Result<()> {
        if target.layer_dims != self.layer_dims {
            return Err(Error::Shape(format!(
                "cannot copy {:?} into {:?}",
                self.layer_dims, target.layer_dims
            )));
        }
        for (dst, src) in target.weights.iter_mut().zip(&self.weights) {
            dst.copy_from_slice(src);
        }
        for (dst, src) in target.biases.iter_mut().zip(&self.biases) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    /// Greedy action index with ties broken toward the lowest index.
    pub fn argmax(values: &[f64]) -> usize {
        let mut best = 0;
        for (i, &v) in values.iter().enumerate().skip(1) {
            if v > values[best] {
                best = i;
            }
        }
        best
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn tag(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Usage(format!(
                "unknown optimizer {s:?} (expected sgd or adam)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first_moment: MlpParams,
    second_moment: MlpParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &MlpParams) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        })
    }
}

/// One descent step. Non-finite gradients abort before anything is touched.
pub fn sgd_step(params: &mut MlpParams, grads: &MlpGrads, opt: &mut OptimizerState) -> Result<()> {
    if grads.layer_dims != params.layer_dims || opt.first_moment.layer_dims != params.layer_dims {
        return Err(Error::Shape(format!(
            "gradient/optimizer dims do not match parameters {:?}",
            params.layer_dims
        )));
    }
    if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "gradient contains {bad} at optimizer step {}",
            opt.step + 1
        )));
    }
    opt.step += 1;
    let lr = opt.learning_rate;
    match opt.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads.iter()) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam => {
            let (b1, b2, eps) = (opt.beta1, opt.beta2, opt.eps);
            let c1 = 1.0 - b1.powi(opt.step as i32);
            let c2 = 1.0 - b2.powi(opt.step as i32);
            for (((p, g), m), v) in params
                .iter_mut()
                .zip(grads.iter())
                .zip(opt.first_moment.iter_mut())
                .zip(opt.second_moment.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
    Ok(())
}

/// Writes the versioned text model format.
pub fn save_model(path: &Path, params: &MlpParams, optimizer: OptimizerKind) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "{MODEL_FORMAT} {MODEL_VERSION}").unwrap();
    writeln!(s, "layer_dims {}", join(&params.layer_dims)).unwrap();
    writeln!(s, "optimizer {}", optimizer.tag()).unwrap();
    for k in 0..params.num_layers() {
        let (n_in, n_out) = (params.layer_dims[k], params.layer_dims[k + 1]);
        writeln!(s, "weights {k} {n_out} {n_in}").unwrap();
        for row in params.weights[k].chunks_exact(n_in) {
            writeln!(s, "{}", join(row)).unwrap();
        }
        writeln!(s, "biases {k} {n_out}").unwrap();
        writeln!(s, "{}", join(&params.biases[k])).unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn load_model(path: &Path) -> Result<(MlpParams, OptimizerKind)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text).map_err(|msg| Error::Load {
        path: path.to_path_buf(),
        msg,
    })
}

/// True if `text` starts with the model format header (any version).
pub fn looks_like_model(text: &str) -> bool {
    text.starts_with(MODEL_FORMAT)
}

fn parse_model(text: &str) -> std::result::Result<(MlpParams, OptimizerKind), String> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| format!("unexpected end of file, expected {what}"))
    };

    let (_, header) = next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MODEL_FORMAT) {
        return Err(format!("not a {MODEL_FORMAT} file"));
    }
    let version = parts.next().unwrap_or("");
    if version != MODEL_VERSION.to_string() {
        return Err(format!(
            "model format version mismatch: file has {version:?}, expected {MODEL_VERSION}"
        ));
    }

    let (ln, dims_line) = next("layer_dims")?;
    let dims: Vec<usize> = keyed(dims_line, "layer_dims", ln)?
        .iter()
        .map(|t| {
            t.parse()
                .map_err(|_| format!("line {ln}: bad layer size {t:?}"))
        })
        .collect::<std::result::Result<_, _>>()?;
    check_dims(&dims).map_err(|e| format!("line {ln}: {e}"))?;

    let (ln, opt_line) = next("optimizer")?;
    let opt_tag = keyed(opt_line, "optimizer", ln)?;
    let optimizer: OptimizerKind = opt_tag
        .first()
        .ok_or_else(|| format!("line {ln}: missing optimizer tag"))?
        .parse()
        .map_err(|e: Error| format!("line {ln}: {e}"))?;

    let mut params = MlpParams::zeros(&dims).map_err(|e| e.to_string())?;
    for k in 0..params.num_layers() {
        let (n_in, n_out) = (dims[k], dims[k + 1]);
        let (ln, head) = next("weights")?;
        let expect = format!("weights {k} {n_out} {n_in}");
        if head != expect {
            return Err(format!("line {ln}: expected {expect:?}, found {head:?}"));
        }
        for r in 0..n_out {
            let (ln, row) = next("weight row")?;
            let vals = parse_reals(row, n_in, ln)?;
            params.weights[k][r * n_in..(r + 1) * n_in].copy_from_slice(&vals);
        }
        let (ln, head) = next("biases")?;
        let expect = format!("biases {k} {n_out}");
        if head != expect {
            return Err(format!("line {ln}: expected {expect:?}, found {head:?}"));
        }
        let (ln, row) = next("bias row")?;
        params.biases[k] = parse_reals(row, n_out, ln)?;
    }
    if !params.is_finite() {
        return Err("model contains non-finite parameters".into());
    }
    Ok((params, optimizer))
}

fn keyed<'a>(line: &'a str, key: &str, ln: usize) -> std::result::Result<Vec<&'a str>, String> {
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(format!("line {ln}: expected {key:?}"));
    }
    Ok(it.collect())
}

fn parse_reals(line: &str, n: usize, ln: usize) -> std::result::Result<Vec<f64>, String> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| format!("line {ln}: bad number {t:?}"))
        })
        .collect::<std::result::Result<_, _>>()?;
    if vals.len() != n {
        return Err(format!(
            "line {ln}: expected {n} values, found {}",
            vals.len()
        ));
    }
    Ok(vals)
}
