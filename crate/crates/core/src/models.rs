//! The two recurrent architectures: a ReLU RNN character language model
//! and a GRU sequence classifier with a ReLU dense layer and softmax head.
//!
//! Both are generic over the weight storage `W`, so the same forward code
//! runs on `f64` tensors during training and on packed low-bit weights at
//! inference time. Vectors are column tensors (`n x 1`).

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::tensor::{log_softmax_in_place, matvec_unchecked, relu, sigmoid, Tensor};

/// Weight storage that can be multiplied with a vector.
pub trait LinearWeights {
    fn shape(&self) -> (usize, usize);

    /// `W x`, summing each row from `0.0` in ascending column order.
    fn matvec(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Column `j`, i.e. `W e_j`.
    fn column(&self, j: usize) -> Vec<f64>;

    /// All values in row-major order.
    fn values(&self) -> Vec<f64>;
}

impl LinearWeights for Tensor {
    fn shape(&self) -> (usize, usize) {
        Tensor::shape(self)
    }

    fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Tensor::matvec(self, x)
    }

    fn column(&self, j: usize) -> Vec<f64> {
        self.col_values(j)
    }

    fn values(&self) -> Vec<f64> {
        self.data().to_vec()
    }
}

fn check_shape<W: LinearWeights>(name: &str, w: &W, want: (usize, usize)) -> Result<()> {
    if w.shape() != want {
        return Err(Error::Dimension(format!(
            "{name} is {:?}, expected {want:?}",
            w.shape()
        )));
    }
    Ok(())
}

fn glorot(rng: &mut RandomSource, fan_out: usize, fan_in: usize) -> Result<Tensor> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform_fill(rng, -bound, bound, fan_out, fan_in)
}

fn nonzero_sizes(sizes: &[(&str, usize)]) -> Result<()> {
    for (name, n) in sizes {
        if *n == 0 {
            return Err(Error::Parameter(format!("{name} must be at least 1")));
        }
    }
    Ok(())
}

/// Elementwise sum of three equal-length vectors, left to right.
#[inline]
fn sum3(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    a.iter().zip(b).zip(c).map(|((x, y), z)| x + y + z).collect()
}

#[inline]
fn add2(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// ReLU RNN language model:
/// `h_t = relu(W_xh e(x_t) + W_hh h_{t-1} + b_h)`, `y_t = W_hy h_t + b_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaRnnLm<W = Tensor> {
    /// hidden x vocab
    pub w_xh: W,
    /// hidden x hidden
    pub w_hh: W,
    /// hidden x 1
    pub b_h: W,
    /// vocab x hidden
    pub w_hy: W,
    /// vocab x 1
    pub b_y: W,
}

pub const VANILLA_PARAM_NAMES: [&str; 5] = ["w_xh", "w_hh", "b_h", "w_hy", "b_y"];

/// Identity recurrent matrix, uniform input and output matrices in
/// `[-init_scale, init_scale)`, zero biases.
pub fn init_vanilla(rng: &mut RandomSource, vocab_size: usize, hidden_size: usize, init_scale: f64) -> Result<VanillaRnnLm> {
    nonzero_sizes(&[("vocab_size", vocab_size), ("hidden_size", hidden_size)])?;
    if !(init_scale > 0.0) || !init_scale.is_finite() {
        return Err(Error::Parameter(format!("init_scale must be positive, got {init_scale}")));
    }
    let w_xh = Tensor::uniform_fill(rng, -init_scale, init_scale, hidden_size, vocab_size)?;
    let w_hy = Tensor::uniform_fill(rng, -init_scale, init_scale, vocab_size, hidden_size)?;
    Ok(VanillaRnnLm {
        w_xh,
        w_hh: Tensor::identity(hidden_size),
        b_h: Tensor::zeros(hidden_size, 1),
        w_hy,
        b_y: Tensor::zeros(vocab_size, 1),
    })
}

impl<W> VanillaRnnLm<W> {
    pub fn named(&self) -> [(&'static str, &W); 5] {
        [
            ("w_xh", &self.w_xh),
            ("w_hh", &self.w_hh),
            ("b_h", &self.b_h),
            ("w_hy", &self.w_hy),
            ("b_y", &self.b_y),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut W); 5] {
        [
            ("w_xh", &mut self.w_xh),
            ("w_hh", &mut self.w_hh),
            ("b_h", &mut self.b_h),
            ("w_hy", &mut self.w_hy),
            ("b_y", &mut self.b_y),
        ]
    }

    /// Converts every weight with `f`, in parameter order.
    pub fn try_map<V>(&self, mut f: impl FnMut(&'static str, &W) -> Result<V>) -> Result<VanillaRnnLm<V>> {
        Ok(VanillaRnnLm {
            w_xh: f("w_xh", &self.w_xh)?,
            w_hh: f("w_hh", &self.w_hh)?,
            b_h: f("b_h", &self.b_h)?,
            w_hy: f("w_hy", &self.w_hy)?,
            b_y: f("b_y", &self.b_y)?,
        })
    }

    /// Reassembles a model from weights in parameter order.
    pub fn from_named(mut lookup: impl FnMut(&'static str) -> Result<W>) -> Result<Self> {
        Ok(Self {
            w_xh: lookup("w_xh")?,
            w_hh: lookup("w_hh")?,
            b_h: lookup("b_h")?,
            w_hy: lookup("w_hy")?,
            b_y: lookup("b_y")?,
        })
    }
}

impl<W: LinearWeights> VanillaRnnLm<W> {
    pub fn hidden_size(&self) -> usize {
        self.w_hh.shape().0
    }

    pub fn vocab_size(&self) -> usize {
        self.w_xh.shape().1
    }

    pub fn validate(&self) -> Result<()> {
        let (h, v) = self.w_xh.shape();
        nonzero_sizes(&[("hidden_size", h), ("vocab_size", v)])?;
        check_shape("w_hh", &self.w_hh, (h, h))?;
        check_shape("b_h", &self.b_h, (h, 1))?;
        check_shape("w_hy", &self.w_hy, (v, h))?;
        check_shape("b_y", &self.b_y, (v, 1))
    }

    fn check_token(&self, token: usize) -> Result<()> {
        if token >= self.vocab_size() {
            return Err(Error::Data(format!(
                "token {token} outside vocabulary of {}",
                self.vocab_size()
            )));
        }
        Ok(())
    }

    /// One recurrence step with a pre-decoded bias.
    fn step_with(&self, h: &[f64], token: usize, b_h: &[f64]) -> Result<Vec<f64>> {
        self.check_token(token)?;
        let input = self.w_xh.column(token);
        let rec = self.w_hh.matvec(h)?;
        Ok(sum3(&input, &rec, b_h).into_iter().map(relu).collect())
    }

    fn logits_with(&self, h: &[f64], b_y: &[f64]) -> Result<Vec<f64>> {
        Ok(add2(&self.w_hy.matvec(h)?, b_y))
    }

    /// Runs the recurrence over `tokens` from `h0`, returning the logits
    /// after each step and the final hidden state.
    pub fn forward(&self, tokens: &[usize], h0: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        self.validate()?;
        if h0.len() != self.hidden_size() {
            return Err(Error::Dimension(format!(
                "h0 has length {}, hidden size is {}",
                h0.len(),
                self.hidden_size()
            )));
        }
        let b_h = self.b_h.values();
        let b_y = self.b_y.values();
        let mut h = h0.to_vec();
        let mut logits = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            h = self.step_with(&h, tok, &b_h)?;
            logits.push(self.logits_with(&h, &b_y)?);
        }
        Ok((logits, h))
    }

    /// Total negative log-likelihood (nats) of a chunk from a zero state.
    /// Every symbol is predicted, the first one from the initial state
    /// alone. Returns `(sum of nats, number of predictions)`.
    pub fn chunk_nll(&self, chunk: &[usize]) -> Result<(f64, usize)> {
        self.validate()?;
        let b_h = self.b_h.values();
        let b_y = self.b_y.values();
        let mut h = vec![0.0; self.hidden_size()];
        let mut total = 0.0;
        for (t, &target) in chunk.iter().enumerate() {
            self.check_token(target)?;
            if t > 0 {
                h = self.step_with(&h, chunk[t - 1], &b_h)?;
            }
            let mut logp = self.logits_with(&h, &b_y)?;
            log_softmax_in_place(&mut logp);
            total += -logp[target];
        }
        Ok((total, chunk.len()))
    }
}

/// GRU layer followed by a ReLU dense layer and a softmax output layer,
/// classifying a whole sequence from the final hidden state.
///
/// ```text
/// z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
/// r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
/// c_t = tanh(W_h x_t + U_h (r_t * h_{t-1}) + b_h)
/// h_t = (1 - z_t) * h_{t-1} + z_t * c_t
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruClassifier<W = Tensor> {
    pub w_z: W,
    pub w_r: W,
    pub w_h: W,
    pub u_z: W,
    pub u_r: W,
    pub u_h: W,
    pub b_z: W,
    pub b_r: W,
    pub b_h: W,
    /// dense x hidden
    pub w_d: W,
    pub b_d: W,
    /// labels x dense
    pub w_o: W,
    pub b_o: W,
}

pub const GRU_PARAM_NAMES: [&str; 13] = [
    "w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h", "w_d", "b_d", "w_o", "b_o",
];

/// Glorot-uniform weights, zero biases.
pub fn init_gru(
    rng: &mut RandomSource,
    input_size: usize,
    hidden_size: usize,
    dense_size: usize,
    n_labels: usize,
) -> Result<GruClassifier> {
    nonzero_sizes(&[
        ("input_size", input_size),
        ("hidden_size", hidden_size),
        ("dense_size", dense_size),
        ("n_labels", n_labels),
    ])?;
    Ok(GruClassifier {
        w_z: glorot(rng, hidden_size, input_size)?,
        w_r: glorot(rng, hidden_size, input_size)?,
        w_h: glorot(rng, hidden_size, input_size)?,
        u_z: glorot(rng, hidden_size, hidden_size)?,
        u_r: glorot(rng, hidden_size, hidden_size)?,
        u_h: glorot(rng, hidden_size, hidden_size)?,
        b_z: Tensor::zeros(hidden_size, 1),
        b_r: Tensor::zeros(hidden_size, 1),
        b_h: Tensor::zeros(hidden_size, 1),
        w_d: glorot(rng, dense_size, hidden_size)?,
        b_d: Tensor::zeros(dense_size, 1),
        w_o: glorot(rng, n_labels, dense_size)?,
        b_o: Tensor::zeros(n_labels, 1),
    })
}

/// Gate values of one GRU step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

impl<W> GruClassifier<W> {
    pub fn named(&self) -> [(&'static str, &W); 13] {
        [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
            ("b_z", &self.b_z),
            ("b_r", &self.b_r),
            ("b_h", &self.b_h),
            ("w_d", &self.w_d),
            ("b_d", &self.b_d),
            ("w_o", &self.w_o),
            ("b_o", &self.b_o),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut W); 13] {
        [
            ("w_z", &mut self.w_z),
            ("w_r", &mut self.w_r),
            ("w_h", &mut self.w_h),
            ("u_z", &mut self.u_z),
            ("u_r", &mut self.u_r),
            ("u_h", &mut self.u_h),
            ("b_z", &mut self.b_z),
            ("b_r", &mut self.b_r),
            ("b_h", &mut self.b_h),
            ("w_d", &mut self.w_d),
            ("b_d", &mut self.b_d),
            ("w_o", &mut self.w_o),
            ("b_o", &mut self.b_o),
        ]
    }

    pub fn try_map<V>(&self, mut f: impl FnMut(&'static str, &W) -> Result<V>) -> Result<GruClassifier<V>> {
        GruClassifier::from_named(|name| {
            let w = self
                .named()
                .into_iter()
                .find(|(n, _)| *n == name)
                .map(|(_, w)| w)
                .expect("known parameter name");
            f(name, w)
        })
    }

    pub fn from_named(mut lookup: impl FnMut(&'static str) -> Result<W>) -> Result<Self> {
        Ok(Self {
            w_z: lookup("w_z")?,
            w_r: lookup("w_r")?,
            w_h: lookup("w_h")?,
            u_z: lookup("u_z")?,
            u_r: lookup("u_r")?,
            u_h: lookup("u_h")?,
            b_z: lookup("b_z")?,
            b_r: lookup("b_r")?,
            b_h: lookup("b_h")?,
            w_d: lookup("w_d")?,
            b_d: lookup("b_d")?,
            w_o: lookup("w_o")?,
            b_o: lookup("b_o")?,
        })
    }
}

impl<W: LinearWeights> GruClassifier<W> {
    pub fn input_size(&self) -> usize {
        self.w_z.shape().1
    }

    pub fn hidden_size(&self) -> usize {
        self.w_z.shape().0
    }

    pub fn dense_size(&self) -> usize {
        self.w_d.shape().0
    }

    pub fn n_labels(&self) -> usize {
        self.w_o.shape().0
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d) = self.w_z.shape();
        let k = self.w_d.shape().0;
        let l = self.w_o.shape().0;
        nonzero_sizes(&[("hidden_size", h), ("input_size", d), ("dense_size", k), ("n_labels", l)])?;
        check_shape("w_r", &self.w_r, (h, d))?;
        check_shape("w_h", &self.w_h, (h, d))?;
        for (name, u) in [("u_z", &self.u_z), ("u_r", &self.u_r), ("u_h", &self.u_h)] {
            check_shape(name, u, (h, h))?;
        }
        for (name, b) in [("b_z", &self.b_z), ("b_r", &self.b_r), ("b_h", &self.b_h)] {
            check_shape(name, b, (h, 1))?;
        }
        check_shape("w_d", &self.w_d, (k, h))?;
        check_shape("b_d", &self.b_d, (k, 1))?;
        check_shape("w_o", &self.w_o, (l, k))?;
        check_shape("b_o", &self.b_o, (l, 1))
    }

    fn step_with(&self, x: &[f64], h: &[f64], biases: &GruBiases) -> Result<GruStep> {
        let z: Vec<f64> = sum3(&self.w_z.matvec(x)?, &self.u_z.matvec(h)?, &biases.z)
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<f64> = sum3(&self.w_r.matvec(x)?, &self.u_r.matvec(h)?, &biases.r)
            .into_iter()
            .map(sigmoid)
            .collect();
        let gated: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let candidate: Vec<f64> = sum3(&self.w_h.matvec(x)?, &self.u_h.matvec(&gated)?, &biases.h)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let h_new = h
            .iter()
            .zip(&z)
            .zip(&candidate)
            .map(|((&hp, &zi), &ci)| (1.0 - zi) * hp + zi * ci)
            .collect();
        Ok(GruStep {
            z,
            r,
            candidate,
            h: h_new,
        })
    }

    /// One GRU step from state `h` on input `x`.
    pub fn step(&self, x: &[f64], h: &[f64]) -> Result<GruStep> {
        self.step_with(x, h, &GruBiases::decode(self))
    }

    /// Runs the GRU over the rows of `seq` (T x input_size) and returns the
    /// final hidden state with class log-probabilities. `h0` defaults to
    /// zeros.
    pub fn forward(&self, seq: &Tensor, h0: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        if seq.cols() != self.input_size() {
            return Err(Error::Data(format!(
                "feature rows have width {}, model expects {}",
                seq.cols(),
                self.input_size()
            )));
        }
        let mut h = match h0 {
            Some(h0) if h0.len() != self.hidden_size() => {
                return Err(Error::Dimension(format!("h0 has length {}", h0.len())));
            }
            Some(h0) => h0.to_vec(),
            None => vec![0.0; self.hidden_size()],
        };
        let biases = GruBiases::decode(self);
        for t in 0..seq.rows() {
            h = self.step_with(seq.row(t), &h, &biases)?.h;
        }
        let logp = self.head(&h)?;
        Ok((h, logp))
    }

    /// Dense ReLU layer and log-softmax output on a hidden state.
    pub fn head(&self, h: &[f64]) -> Result<Vec<f64>> {
        let dense: Vec<f64> = add2(&self.w_d.matvec(h)?, &self.b_d.values())
            .into_iter()
            .map(relu)
            .collect();
        let mut out = add2(&self.w_o.matvec(&dense)?, &self.b_o.values());
        log_softmax_in_place(&mut out);
        Ok(out)
    }
}

struct GruBiases {
    z: Vec<f64>,
    r: Vec<f64>,
    h: Vec<f64>,
}

impl GruBiases {
    fn decode<W: LinearWeights>(m: &GruClassifier<W>) -> Self {
        Self {
            z: m.b_z.values(),
            r: m.b_r.values(),
            h: m.b_h.values(),
        }
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

// Raw row-major matvec exposed for the training code, which works on
// slices to avoid allocating tensors per time step.
#[inline]
pub(crate) fn raw_matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    matvec_unchecked(w.data(), w.rows(), w.cols(), x)
}
