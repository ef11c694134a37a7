use std::io::{Read, Write};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NBF1";

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Hidden-layer nonlinearity.
///
/// The leaky ReLU derivative at exactly zero is taken as the negative-side
/// slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu(a) => {
                if z > 0.0 {
                    z
                } else {
                    a * z
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the
    /// activation value `y = apply(z)`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu(a) => {
                if z > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn tag(self) -> (u8, f64) {
        match self {
            Activation::LeakyRelu(a) => (0, a),
            Activation::Tanh => (1, 0.0),
        }
    }

    fn from_tag(tag: u8, slope: f64) -> Option<Self> {
        match tag {
            0 if slope.is_finite() && slope > 0.0 => Some(Activation::LeakyRelu(slope)),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
}

/// Scalar loss of one sample's network outputs.
pub trait Loss {
    /// Returns the loss and writes dLoss/dOutput into `grad`.
    fn eval(
        &self,
        output: ArrayView1<f64>,
        target: ArrayView1<f64>,
        grad: ArrayViewMut1<f64>,
    ) -> f64;
}

/// `½‖y − t‖²`
#[derive(Debug, Clone, Copy, Default)]
pub struct HalfSquaredError;

impl Loss for HalfSquaredError {
    fn eval(
        &self,
        output: ArrayView1<f64>,
        target: ArrayView1<f64>,
        mut grad: ArrayViewMut1<f64>,
    ) -> f64 {
        let mut loss = 0.0;
        for k in 0..output.len() {
            let d = output[k] - target[k];
            grad[k] = d;
            loss += 0.5 * d * d;
        }
        loss
    }
}

/// Mean over outputs of `(y − t)²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanSquaredError;

impl Loss for MeanSquaredError {
    fn eval(
        &self,
        output: ArrayView1<f64>,
        target: ArrayView1<f64>,
        mut grad: ArrayViewMut1<f64>,
    ) -> f64 {
        let n = output.len() as f64;
        let mut loss = 0.0;
        for k in 0..output.len() {
            let d = output[k] - target[k];
            grad[k] = 2.0 * d / n;
            loss += d * d / n;
        }
        loss
    }
}

/// Dense feedforward network with all parameters in one flat buffer.
///
/// Layer `l` occupies a row-major `out × in` weight block followed by its
/// `out` biases, which is also the order written to checkpoints. Keeping the
/// parameters flat lets the optimizer and the gradient share one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
    hidden: Activation,
    output: OutputActivation,
    seed: u64,
}

/// Pre-activations and activations of every layer for one batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("network has at least one layer")
    }
}

fn layer_offsets(layer_sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(layer_sizes.len());
    let mut off = 0;
    offsets.push(0);
    for w in layer_sizes.windows(2) {
        off += w[0] * w[1] + w[1];
        offsets.push(off);
    }
    offsets
}

fn validate_architecture(layer_sizes: &[usize], hidden: Activation) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Argument(
            "a network needs at least an input and an output size".into(),
        ));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Argument("layer sizes must be positive".into()));
    }
    if let Activation::LeakyRelu(a) = hidden {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Argument(format!(
                "leaky ReLU slope must be positive, got {a}"
            )));
        }
    }
    Ok(())
}

impl MlpNetwork {
    /// Randomly initialized network.
    ///
    /// Weights are uniform with He-style fan-in scaling for leaky ReLU and
    /// Glorot scaling for tanh; biases start at zero.
    pub fn new(layer_sizes: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, hidden)?;
        net.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let bound = match hidden {
                Activation::LeakyRelu(a) => (6.0 / ((1.0 + a * a) * fan_in as f64)).sqrt(),
                Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let off = net.offsets[l];
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_sizes: &[usize], hidden: Activation) -> Result<Self> {
        validate_architecture(layer_sizes, hidden)?;
        let offsets = layer_offsets(layer_sizes);
        let n = *offsets.last().unwrap();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            params: vec![0.0; n],
            offsets,
            hidden,
            output: OutputActivation::Identity,
            seed: 0,
        })
    }

    pub fn from_params(
        layer_sizes: &[usize],
        hidden: Activation,
        seed: u64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, hidden)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        net.seed = seed;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn dims(&self, l: usize) -> (usize, usize) {
        (self.layer_sizes[l + 1], self.layer_sizes[l])
    }

    pub fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (out, inp) = self.dims(l);
        let off = self.offsets[l];
        ArrayView2::from_shape((out, inp), &self.params[off..off + out * inp]).unwrap()
    }

    pub fn weight_mut(&mut self, l: usize) -> ArrayViewMut2<'_, f64> {
        let (out, inp) = self.dims(l);
        let off = self.offsets[l];
        ArrayViewMut2::from_shape((out, inp), &mut self.params[off..off + out * inp]).unwrap()
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (out, inp) = self.dims(l);
        let off = self.offsets[l] + out * inp;
        ArrayView1::from(&self.params[off..off + out])
    }

    pub fn bias_mut(&mut self, l: usize) -> ArrayViewMut1<'_, f64> {
        let (out, inp) = self.dims(l);
        let off = self.offsets[l] + out * inp;
        ArrayViewMut1::from(&mut self.params[off..off + out])
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: cols,
            });
        }
        Ok(())
    }

    fn affine(&self, l: usize, input: &ArrayView2<f64>) -> Array2<f64> {
        let (out, _) = self.dims(l);
        let mut z = Array2::zeros((input.nrows(), out));
        z.assign(&self.bias(l).broadcast((input.nrows(), out)).unwrap());
        general_mat_mul(1.0, input, &self.weight(l).t(), 1.0, &mut z);
        z
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let input = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward_batch(input)?.into_raw_vec_and_offset().0)
    }

    /// Evaluates a batch whose rows are samples.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.num_layers() - 1;
        let mut a = self.affine(0, &x);
        for l in 0..=last {
            if l > 0 {
                a = self.affine(l, &a.view());
            }
            if l < last {
                let act = self.hidden;
                a.mapv_inplace(|z| act.apply(z));
            }
        }
        Ok(a)
    }

    /// Forward pass that keeps what reverse mode needs.
    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let last = self.num_layers() - 1;
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.num_layers());
        for l in 0..=last {
            let z = match l {
                0 => self.affine(0, &x),
                _ => self.affine(l, &post[l - 1].view()),
            };
            let a = if l < last {
                let act = self.hidden;
                z.mapv(|v| act.apply(v))
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardCache {
            input: x.to_owned(),
            pre,
            post,
        })
    }

    /// Reverse-mode sweep. `grad_out` holds dLoss/dOutput per batch row; the
    /// returned flat gradient is summed over the batch and laid out like
    /// [`MlpNetwork::params`].
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(cache, grad_out, &mut grad, false);
        grad
    }

    /// Like [`MlpNetwork::backward`] but also returns dLoss/dInput per row.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache,
        grad_out: ArrayView2<f64>,
    ) -> (Vec<f64>, Array2<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let dx = self
            .backward_into(cache, grad_out, &mut grad, true)
            .unwrap();
        (grad, dx)
    }

    /// Accumulates (adds) the parameter gradient into `grad`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_out: ArrayView2<f64>,
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Array2<f64>> {
        assert_eq!(grad.len(), self.params.len());
        let last = self.num_layers() - 1;
        let mut delta = grad_out.to_owned();
        for l in (0..=last).rev() {
            if l < last {
                let act = self.hidden;
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre[l])
                    .and(&cache.post[l])
                    .for_each(|d, &z, &y| *d *= act.derivative(z, y));
            }
            let (out, inp) = self.dims(l);
            let off = self.offsets[l];
            let (wblock, rest) = grad[off..].split_at_mut(out * inp);
            let mut gw = ArrayViewMut2::from_shape((out, inp), wblock).unwrap();
            let input = if l == 0 {
                cache.input.view()
            } else {
                cache.post[l - 1].view()
            };
            general_mat_mul(1.0, &delta.t(), &input, 1.0, &mut gw);
            let mut gb = ArrayViewMut1::from(&mut rest[..out]);
            gb += &delta.sum_axis(Axis(0));
            if l > 0 || want_input {
                delta = delta.dot(&self.weight(l));
            }
        }
        if want_input {
            Some(delta)
        } else {
            None
        }
    }

    /// Mean batch loss and its exact gradient with respect to every
    /// parameter. Inputs and targets are row-per-sample.
    pub fn param_grad<L: Loss>(
        &self,
        loss: &L,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        if targets.nrows() != inputs.nrows() {
            return Err(Error::Shape {
                expected: inputs.nrows(),
                got: targets.nrows(),
            });
        }
        if targets.ncols() != self.output_dim() {
            return Err(Error::Shape {
                expected: self.output_dim(),
                got: targets.ncols(),
            });
        }
        let cache = self.forward_cached(inputs)?;
        let n = inputs.nrows() as f64;
        let out = cache.output();
        let mut dout = Array2::zeros(out.raw_dim());
        let mut total = 0.0;
        for (b, (y, t)) in out.outer_iter().zip(targets.outer_iter()).enumerate() {
            let l = loss.eval(y, t, dout.row_mut(b));
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    index: b,
                    what: "loss".into(),
                });
            }
            total += l;
        }
        dout /= n;
        Ok((total / n, self.backward(&cache, dout.view())))
    }

    /// Exact ∂output/∂input (rows: outputs, columns: inputs) by forward-mode
    /// tangent propagation.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_input(x.len())?;
        let input = ArrayView2::from_shape((1, x.len()), x).unwrap();
        let (_, tangents) = self.forward_with_tangents(input)?;
        let mut jac = Array2::zeros((self.output_dim(), self.input_dim()));
        for (k, t) in tangents.iter().enumerate() {
            jac.column_mut(k).assign(&t.row(0));
        }
        Ok(jac)
    }

    /// Batch values together with one tangent matrix per input coordinate:
    /// `tangents[k][(b, o)] = ∂output_o/∂input_k` at sample `b`.
    pub fn forward_with_tangents(
        &self,
        x: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        self.check_input(x.ncols())?;
        let nin = self.input_dim();
        let last = self.num_layers() - 1;
        let batch = x.nrows();

        // First layer: the tangent of input k is the k-th weight column.
        let mut a = self.affine(0, &x);
        let w0 = self.weight(0);
        let mut tangents: Vec<Array2<f64>> = (0..nin)
            .map(|k| {
                w0.column(k)
                    .broadcast((batch, w0.nrows()))
                    .unwrap()
                    .to_owned()
            })
            .collect();
        for l in 0..=last {
            if l > 0 {
                let w = self.weight(l);
                a = self.affine(l, &a.view());
                for t in tangents.iter_mut() {
                    *t = t.dot(&w.t());
                }
            }
            if l < last {
                let act = self.hidden;
                let z = a.clone();
                a.mapv_inplace(|v| act.apply(v));
                for t in tangents.iter_mut() {
                    ndarray::Zip::from(t)
                        .and(&z)
                        .and(&a)
                        .for_each(|d, &zz, &yy| *d *= act.derivative(zz, yy));
                }
            }
        }
        Ok((a, tangents))
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.layer_sizes.len() as u64).to_le_bytes())?;
        for &s in &self.layer_sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        let (tag, slope) = self.hidden.tag();
        w.write_all(&[tag])?;
        w.write_all(&slope.to_le_bytes())?;
        let out_tag = match self.output {
            OutputActivation::Identity => 0u8,
        };
        w.write_all(&[out_tag])?;
        w.write_all(&self.seed.to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a checkpoint; the error string describes what was malformed.
    pub fn read_checkpoint<R: Read>(mut r: R) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| "truncated header".to_string())?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(format!("bad magic {:?}", String::from_utf8_lossy(&magic)));
        }
        let mut u = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> std::result::Result<u64, String> {
            r.read_exact(&mut u)
                .map_err(|_| "truncated header".to_string())?;
            Ok(u64::from_le_bytes(u))
        };
        let n = read_u64(&mut r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(format!("implausible layer count {n}"));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            sizes.push(read_u64(&mut r)? as usize);
        }
        let mut b = [0u8; 1];
        r.read_exact(&mut b)
            .map_err(|_| "truncated header".to_string())?;
        let mut f = [0u8; 8];
        r.read_exact(&mut f)
            .map_err(|_| "truncated header".to_string())?;
        let hidden =
            Activation::from_tag(b[0], f64::from_le_bytes(f)).ok_or("unknown activation")?;
        r.read_exact(&mut b)
            .map_err(|_| "truncated header".to_string())?;
        if b[0] != 0 {
            return Err("unknown output activation".into());
        }
        let seed = read_u64(&mut r)?;
        let mut net = MlpNetwork::zeros(&sizes, hidden).map_err(|e| e.to_string())?;
        net.seed = seed;
        for p in net.params.iter_mut() {
            r.read_exact(&mut f)
                .map_err(|_| "truncated parameter block".to_string())?;
            *p = f64::from_le_bytes(f);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|e| e.to_string())? != 0 {
            return Err("trailing bytes after parameters".into());
        }
        Ok(net)
    }
}
