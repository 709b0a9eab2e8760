//! Weight rounding methods: ternarization (stochastic and thresholded),
//! fixed-point pow2-ternarization, and exponential (power-of-two)
//! quantization.
//!
//! All functions are elementwise and pure given their random source. Zero
//! results are always `+0.0`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

/// Smallest exponent produced by exponential quantization.
pub const EXP_MIN: i32 = -63;
/// Largest exponent produced by exponential quantization.
pub const EXP_MAX: i32 = 63;

/// Exact `2^e` for `e` in `[-1074, 1023]`.
pub fn pow2i(e: i32) -> f64 {
    assert!((-1074..=1023).contains(&e), "2^{e} is not a finite nonzero f64");
    if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (e + 1074))
    }
}

/// `floor(log2(|x|))` computed from the bit pattern. `x` must be finite
/// and nonzero.
pub fn floor_log2(x: f64) -> i32 {
    let bits = x.abs().to_bits();
    let biased = (bits >> 52) as i32;
    if biased == 0 {
        let mantissa = bits & ((1u64 << 52) - 1);
        (63 - mantissa.leading_zeros() as i32) - 1074
    } else {
        biased - 1023
    }
}

#[inline]
fn signed(sign_negative: bool, v: f64) -> f64 {
    if sign_negative {
        -v
    } else {
        v
    }
}

/// Fixed-point format: `m` integer bits including the sign bit, `f`
/// fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QmfFormat {
    m: u32,
    f: u32,
}

impl QmfFormat {
    pub fn new(m: u32, f: u32) -> Result<Self> {
        if m < 1 {
            return Err(Error::Parameter("Qm.f needs at least one integer bit".into()));
        }
        if m > 62 || f > 62 {
            return Err(Error::Parameter(format!("Q{m}.{f} is wider than supported")));
        }
        Ok(Self { m, f })
    }

    pub fn integer_bits(&self) -> u32 {
        self.m
    }

    pub fn fractional_bits(&self) -> u32 {
        self.f
    }

    /// Grid spacing `2^-f`.
    pub fn step(&self) -> f64 {
        pow2i(-(self.f as i32))
    }

    /// Magnitude bound applied before rounding.
    pub fn clip_bound(&self, clip: ClipMode) -> f64 {
        match clip {
            ClipMode::Literal => pow2i(self.m as i32),
            ClipMode::Strict => (pow2i(self.m as i32 - 1) - self.step()).max(0.0),
        }
    }
}

impl fmt::Display for QmfFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.m, self.f)
    }
}

impl FromStr for QmfFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parameter(format!("expected a format like Q1.1, got {s:?}"));
        let body = s.strip_prefix('Q').or_else(|| s.strip_prefix('q')).ok_or_else(bad)?;
        let (m, f) = body.split_once('.').ok_or_else(bad)?;
        Self::new(m.parse().map_err(|_| bad())?, f.parse().map_err(|_| bad())?)
    }
}

/// Range clipping rule for pow2-ternarization.
///
/// `Literal` clamps to `±2^m`. `Strict` clamps to `±(2^(m-1) - 2^-f)`,
/// the symmetric range of an `m`-integer-bit two's complement number,
/// which makes Q1.1 produce exactly `{-0.5, 0, 0.5}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ClipMode {
    #[default]
    Literal,
    Strict,
}

/// Lower and upper rounding candidates (ordered by magnitude) and the
/// probability of picking the upper one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantDecision {
    pub lower: f64,
    pub upper: f64,
    pub p: f64,
}

impl QuantDecision {
    pub fn expected(&self) -> f64 {
        self.p * self.upper + (1.0 - self.p) * self.lower
    }

    fn pick(&self, take_upper: bool) -> f64 {
        if take_upper {
            self.upper
        } else {
            self.lower
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum QuantMethod {
    #[default]
    None,
    TernaryStochastic,
    TernaryDeterministic,
    Pow2Ternary {
        format: QmfFormat,
        clip: ClipMode,
    },
    ExpStochastic,
    ExpDeterministic,
}

impl QuantMethod {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, QuantMethod::TernaryStochastic | QuantMethod::ExpStochastic)
    }

    /// The thresholded counterpart used at test time.
    pub fn deterministic(&self) -> QuantMethod {
        match *self {
            QuantMethod::TernaryStochastic => QuantMethod::TernaryDeterministic,
            QuantMethod::ExpStochastic => QuantMethod::ExpDeterministic,
            other => other,
        }
    }

    /// Filename-safe tag.
    pub fn tag(&self) -> String {
        self.to_string().replace(':', "-").replace('.', "_")
    }

    /// Whether `v` can be produced by this method.
    pub fn admits(&self, v: f64) -> bool {
        match *self {
            QuantMethod::None => v.is_finite(),
            QuantMethod::TernaryStochastic | QuantMethod::TernaryDeterministic => {
                v == 0.0 || v == 1.0 || v == -1.0
            }
            QuantMethod::Pow2Ternary { format, clip } => {
                let scaled = v / format.step();
                v.abs() <= format.clip_bound(clip) && scaled == scaled.trunc()
            }
            QuantMethod::ExpStochastic | QuantMethod::ExpDeterministic => {
                v == 0.0 || (v.is_finite() && (EXP_MIN..=EXP_MAX).contains(&floor_log2(v)) && v.abs() == pow2i(floor_log2(v)))
            }
        }
    }

    pub fn apply(&self, w: f64, rng: &mut RandomSource) -> f64 {
        match *self {
            QuantMethod::None => w,
            QuantMethod::TernaryStochastic => ternarize_stochastic(w, rng),
            QuantMethod::TernaryDeterministic => ternarize_deterministic(w),
            QuantMethod::Pow2Ternary { format, clip } => pow2_ternarize_with(w, format, clip),
            QuantMethod::ExpStochastic => exp_quantize_stochastic(w, rng),
            QuantMethod::ExpDeterministic => exp_quantize_deterministic(w),
        }
    }
}

impl fmt::Display for QuantMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantMethod::None => f.write_str("none"),
            QuantMethod::TernaryStochastic => f.write_str("ternary-stochastic"),
            QuantMethod::TernaryDeterministic => f.write_str("ternary-deterministic"),
            QuantMethod::Pow2Ternary {
                format,
                clip: ClipMode::Literal,
            } => write!(f, "pow2-ternary:{format}"),
            QuantMethod::Pow2Ternary {
                format,
                clip: ClipMode::Strict,
            } => write!(f, "pow2-ternary-strict:{format}"),
            QuantMethod::ExpStochastic => f.write_str("exp-stochastic"),
            QuantMethod::ExpDeterministic => f.write_str("exp-deterministic"),
        }
    }
}

impl FromStr for QuantMethod {
    type Err = Error;

    /// Accepts the names printed by `Display`. A bare `pow2-ternary`
    /// means Q1.1.
    fn from_str(s: &str) -> Result<Self> {
        let (name, format) = match s.split_once(':') {
            Some((n, f)) => (n, Some(f.parse::<QmfFormat>()?)),
            None => (s, None),
        };
        let pow2 = |clip| QuantMethod::Pow2Ternary {
            format: format.unwrap_or(QmfFormat { m: 1, f: 1 }),
            clip,
        };
        let method = match name {
            "none" => QuantMethod::None,
            "ternary-stochastic" => QuantMethod::TernaryStochastic,
            "ternary-deterministic" => QuantMethod::TernaryDeterministic,
            "pow2-ternary" => pow2(ClipMode::Literal),
            "pow2-ternary-strict" => pow2(ClipMode::Strict),
            "exp-stochastic" => QuantMethod::ExpStochastic,
            "exp-deterministic" => QuantMethod::ExpDeterministic,
            _ => return Err(Error::Parameter(format!("unknown quantization method {s:?}"))),
        };
        if format.is_some() && !matches!(method, QuantMethod::Pow2Ternary { .. }) {
            return Err(Error::Parameter(format!("{name} takes no Qm.f format")));
        }
        Ok(method)
    }
}

/// `sign(w) * Bernoulli(min(2|w|, 1))`. One uniform is consumed per call.
pub fn ternarize_stochastic(w: f64, rng: &mut RandomSource) -> f64 {
    let p = (2.0 * w.abs()).min(1.0);
    let hit = rng.uniform() < p;
    if !hit || w == 0.0 {
        0.0
    } else {
        signed(w < 0.0, 1.0)
    }
}

/// `+1` above 0.5, `-1` at or below -0.5, `0` otherwise.
pub fn ternarize_deterministic(w: f64) -> f64 {
    if w > 0.5 {
        1.0
    } else if w <= -0.5 {
        -1.0
    } else {
        0.0
    }
}

/// Literal-range pow2-ternarization.
pub fn pow2_ternarize(w: f64, format: QmfFormat) -> f64 {
    pow2_ternarize_with(w, format, ClipMode::Literal)
}

/// Clamp to the format's range, then round to the `2^-f` grid with ties
/// away from zero.
pub fn pow2_ternarize_with(w: f64, format: QmfFormat, clip: ClipMode) -> f64 {
    let bound = format.clip_bound(clip);
    let clipped = w.clamp(-bound, bound);
    let scale = pow2i(format.f as i32);
    let q = (clipped * scale).round() / scale;
    // a tie can round outward past a strict bound that is not on the grid
    let q = q.clamp(-bound, bound);
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

/// Splits `w` into neighbouring signed powers of two: with
/// `e = floor(log2|w|)`, `lower = sign * 2^e`, `upper = sign * 2^(e+1)`
/// and `p = |w| / 2^e - 1`, so `p*|upper| + (1-p)*|lower| = |w|`.
pub fn exp_decompose(w: f64) -> Result<QuantDecision> {
    if !w.is_finite() || w == 0.0 {
        return Err(Error::Parameter(format!("cannot take log2 of {w}")));
    }
    let e = floor_log2(w);
    if e >= 1023 {
        return Err(Error::Parameter(format!("{w} has no finite upper power of two")));
    }
    let neg = w < 0.0;
    let base = pow2i(e);
    Ok(QuantDecision {
        lower: signed(neg, base),
        upper: signed(neg, pow2i(e + 1)),
        p: w.abs() / base - 1.0,
    })
}

/// Candidates restricted to exponents in `[EXP_MIN, EXP_MAX]` plus zero.
/// Below `2^EXP_MIN` the candidates are `0` and `±2^EXP_MIN` (still
/// unbiased); at or above `2^EXP_MAX` the value saturates.
pub fn exp_candidates(w: f64) -> QuantDecision {
    if w == 0.0 {
        return QuantDecision {
            lower: 0.0,
            upper: 0.0,
            p: 0.0,
        };
    }
    let neg = w < 0.0;
    let e = floor_log2(w);
    if e < EXP_MIN {
        let top = pow2i(EXP_MIN);
        QuantDecision {
            lower: 0.0,
            upper: signed(neg, top),
            p: w.abs() / top,
        }
    } else if e >= EXP_MAX {
        let top = signed(neg, pow2i(EXP_MAX));
        QuantDecision {
            lower: top,
            upper: top,
            p: 0.0,
        }
    } else {
        let base = pow2i(e);
        QuantDecision {
            lower: signed(neg, base),
            upper: signed(neg, pow2i(e + 1)),
            p: w.abs() / base - 1.0,
        }
    }
}

/// Unbiased random rounding to a neighbouring signed power of two. One
/// uniform is consumed per call, including for `w == 0`.
pub fn exp_quantize_stochastic(w: f64, rng: &mut RandomSource) -> f64 {
    let u = rng.uniform();
    let d = exp_candidates(w);
    d.pick(u < d.p)
}

/// Nearest signed power of two, ties to the smaller magnitude.
pub fn exp_quantize_deterministic(w: f64) -> f64 {
    let d = exp_candidates(w);
    d.pick(d.p > 0.5)
}

/// Applies `method` to every element in row-major order.
pub fn quantize_tensor(t: &Tensor, method: QuantMethod, rng: &mut RandomSource) -> Result<Tensor> {
    if method == QuantMethod::None {
        return Ok(t.clone());
    }
    if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("non-finite weight at flat index {i}")));
    }
    Ok(t.map_with(|w| method.apply(w, rng)))
}

/// Deterministic variant of `method` over a whole tensor; never touches a
/// random source.
pub fn quantize_tensor_deterministic(t: &Tensor, method: QuantMethod) -> Result<Tensor> {
    // deterministic methods never draw
    let mut unused = RandomSource::new(0);
    quantize_tensor(t, method.deterministic(), &mut unused)
}
