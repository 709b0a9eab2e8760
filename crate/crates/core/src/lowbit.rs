//! Packed low-bit weight storage, multiplication-free kernels and the QRNN
//! model container.
//!
//! Encodings:
//! - `Tern2`: 2 bits per weight, `00` = 0, `01` = +1, `11` = -1 (`10` is
//!   invalid). Weight `j` of a row sits in bits `2*(j%4)..2*(j%4)+2` of byte
//!   `j/4`; each row starts on a fresh byte.
//! - `Exp8`: one byte per weight. Bit 7 is the sign, bits 0-6 hold the
//!   exponent plus 63. `0x7F` is zero; `0xFF` is invalid.
//! - `F64`: little-endian IEEE doubles, for tensors that are not quantized.
//!
//! Container layout (little-endian): `"QRNN"`, u32 version, u32 tensor
//! count, then per tensor u32 name length, UTF-8 name, u8 encoding tag, u32
//! rows, u32 cols, payload.

use std::fs;
use std::path::Path;

use crate::data::WhiteningStats;
use crate::error::{Error, Result};
use crate::models::{GruClassifier, LinearWeights, VanillaRnnLm, GRU_PARAM_NAMES, VANILLA_PARAM_NAMES};
use crate::quantize::{floor_log2, pow2i, QuantMethod, EXP_MAX, EXP_MIN};
use crate::tensor::Tensor;

pub const CONTAINER_MAGIC: &[u8; 4] = b"QRNN";
pub const CONTAINER_VERSION: u32 = 1;
pub const EXP8_BIAS: i32 = 63;
pub const EXP8_ZERO: u8 = 0x7F;

const TERN_ZERO: u8 = 0b00;
const TERN_POS: u8 = 0b01;
const TERN_NEG: u8 = 0b11;

pub const WHITEN_MEAN: &str = "whiten_mean";
pub const WHITEN_STD: &str = "whiten_std";
pub const ALPHABET: &str = "alphabet";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Encoding {
    F64,
    Tern2,
    Exp8,
}

impl Encoding {
    pub fn tag(self) -> u8 {
        match self {
            Encoding::F64 => 0,
            Encoding::Tern2 => 1,
            Encoding::Exp8 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Encoding::F64),
            1 => Ok(Encoding::Tern2),
            2 => Ok(Encoding::Exp8),
            t => Err(Error::Format(format!("unknown encoding tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Encoding::F64 => "F64",
            Encoding::Tern2 => "TERN2",
            Encoding::Exp8 => "EXP8",
        }
    }

    /// Payload bytes for one row of `cols` weights.
    pub fn row_bytes(self, cols: usize) -> usize {
        match self {
            Encoding::F64 => cols * 8,
            Encoding::Tern2 => cols.div_ceil(4),
            Encoding::Exp8 => cols,
        }
    }

    /// Storage for the output of `method`. Fixed-point grids other than
    /// {-1, 0, 1} have no compact code and stay `F64`.
    pub fn for_method(method: QuantMethod) -> Self {
        match method {
            QuantMethod::TernaryStochastic | QuantMethod::TernaryDeterministic => Encoding::Tern2,
            QuantMethod::ExpStochastic | QuantMethod::ExpDeterministic => Encoding::Exp8,
            QuantMethod::None | QuantMethod::Pow2Ternary { .. } => Encoding::F64,
        }
    }

    /// Whether `v` is representable.
    pub fn admits(self, v: f64) -> bool {
        match self {
            Encoding::F64 => true,
            Encoding::Tern2 => v == 0.0 || v == 1.0 || v == -1.0,
            Encoding::Exp8 => exp8_encode(v).is_some(),
        }
    }
}

fn exp8_encode(v: f64) -> Option<u8> {
    if v == 0.0 {
        return Some(EXP8_ZERO);
    }
    if !v.is_finite() {
        return None;
    }
    let e = floor_log2(v.abs());
    if !(EXP_MIN..=EXP_MAX).contains(&e) || pow2i(e) != v.abs() {
        return None;
    }
    let sign = if v < 0.0 { 0x80 } else { 0 };
    Some(sign | (e + EXP8_BIAS) as u8)
}

#[inline]
fn exp8_decode(code: u8) -> f64 {
    let field = code & 0x7F;
    if field == EXP8_ZERO {
        return 0.0;
    }
    let mag = pow2i(field as i32 - EXP8_BIAS);
    if code & 0x80 != 0 {
        -mag
    } else {
        mag
    }
}

#[inline]
fn tern2_code(payload: &[u8], row_start: usize, j: usize) -> u8 {
    (payload[row_start + j / 4] >> (2 * (j % 4))) & 0b11
}

/// Quantized weights in packed form. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedWeights {
    encoding: Encoding,
    rows: usize,
    cols: usize,
    payload: Vec<u8>,
}

pub fn pack(w: &Tensor, encoding: Encoding) -> Result<PackedWeights> {
    PackedWeights::pack(w, encoding)
}

pub fn unpack(p: &PackedWeights) -> Tensor {
    p.unpack()
}

impl PackedWeights {
    pub fn pack(w: &Tensor, encoding: Encoding) -> Result<Self> {
        let (rows, cols) = w.shape();
        let row_bytes = encoding.row_bytes(cols);
        let mut payload = vec![0u8; rows * row_bytes];
        let bad = |row, col, value| Error::Encoding {
            encoding: encoding.name(),
            row,
            col,
            value,
        };
        for i in 0..rows {
            let out = &mut payload[i * row_bytes..(i + 1) * row_bytes];
            for (j, &v) in w.row(i).iter().enumerate() {
                match encoding {
                    Encoding::F64 => out[8 * j..8 * j + 8].copy_from_slice(&v.to_le_bytes()),
                    Encoding::Tern2 => {
                        let code = if v == 1.0 {
                            TERN_POS
                        } else if v == -1.0 {
                            TERN_NEG
                        } else if v == 0.0 {
                            TERN_ZERO
                        } else {
                            return Err(bad(i, j, v));
                        };
                        out[j / 4] |= code << (2 * (j % 4));
                    }
                    Encoding::Exp8 => out[j] = exp8_encode(v).ok_or_else(|| bad(i, j, v))?,
                }
            }
        }
        Ok(Self {
            encoding,
            rows,
            cols,
            payload,
        })
    }

    /// Wraps an existing payload after checking its size and codes.
    pub fn from_raw(encoding: Encoding, rows: usize, cols: usize, payload: Vec<u8>) -> Result<Self> {
        let row_bytes = encoding.row_bytes(cols);
        if payload.len() != rows * row_bytes {
            return Err(Error::Format(format!(
                "{} payload for {rows}x{cols} must be {} bytes, got {}",
                encoding.name(),
                rows * row_bytes,
                payload.len()
            )));
        }
        for i in 0..rows {
            let start = i * row_bytes;
            for j in 0..cols {
                let ok = match encoding {
                    Encoding::F64 => true,
                    Encoding::Tern2 => tern2_code(&payload, start, j) != 0b10,
                    Encoding::Exp8 => payload[start + j] != 0xFF,
                };
                if !ok {
                    return Err(Error::Format(format!(
                        "reserved {} code at ({i}, {j})",
                        encoding.name()
                    )));
                }
            }
            if encoding == Encoding::Tern2 && cols % 4 != 0 && payload[start + row_bytes - 1] >> (2 * (cols % 4)) != 0 {
                return Err(Error::Format(format!("nonzero TERN2 padding bits in row {i}")));
            }
        }
        Ok(Self {
            encoding,
            rows,
            cols,
            payload,
        })
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    fn row_bytes(&self) -> usize {
        self.encoding.row_bytes(self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let start = i * self.row_bytes();
        match self.encoding {
            Encoding::F64 => {
                let b = &self.payload[start + 8 * j..start + 8 * j + 8];
                f64::from_le_bytes(b.try_into().expect("8 bytes"))
            }
            Encoding::Tern2 => match tern2_code(&self.payload, start, j) {
                TERN_POS => 1.0,
                TERN_NEG => -1.0,
                _ => 0.0,
            },
            Encoding::Exp8 => exp8_decode(self.payload[start + j]),
        }
    }

    pub fn unpack(&self) -> Tensor {
        let data = (0..self.rows)
            .flat_map(|i| (0..self.cols).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Tensor::from_vec(self.rows, self.cols, data).expect("shape matches")
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matvec of {}x{} with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(())
    }
}

// `x` with its sign flipped when `neg` is 1, or +0.0 when `keep` is 0.
// Adding +0.0 to an accumulator that started at +0.0 leaves it unchanged,
// so this matches skipping the term, without a data-dependent branch.
#[inline(always)]
fn signed_or_zero(x: f64, neg: u64, keep: u64) -> f64 {
    f64::from_bits((x.to_bits() ^ (neg << 63)) & keep.wrapping_neg())
}

/// `W x` for TERN2 weights using only additions and subtractions.
///
/// Each row sums from `0.0` in ascending column order and skips zero
/// weights, so the result equals the float matvec of the unpacked weights
/// bitwise for finite `x`.
pub fn matvec_ternary(p: &PackedWeights, x: &[f64]) -> Result<Vec<f64>> {
    if p.encoding != Encoding::Tern2 {
        return Err(Error::Parameter(format!("matvec_ternary needs TERN2, got {}", p.encoding.name())));
    }
    p.check_input(x)?;
    if p.cols == 0 {
        return Ok(vec![0.0; p.rows]);
    }
    Ok(p.payload
        .chunks_exact(p.row_bytes())
        .map(|row| {
            let mut acc = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                let code = (row[j / 4] >> (2 * (j % 4))) as u64 & 0b11;
                acc += signed_or_zero(xj, code >> 1, code & 1);
            }
            acc
        })
        .collect())
}

/// `x * 2^e` by adding `e` to the exponent field of `x`.
///
/// Zero, subnormal and non-finite `x`, or a result that would leave the
/// normal range, fall back to an ordinary multiply by `2^e`, which gives
/// the correctly rounded product.
#[inline]
pub fn shift_scale(x: f64, e: i32) -> f64 {
    let bits = x.to_bits();
    let field = ((bits >> 52) & 0x7FF) as i32;
    if field == 0 || field == 0x7FF {
        if x == 0.0 {
            return x;
        }
        return x * pow2i(e);
    }
    let shifted = field + e;
    if !(1..=0x7FE).contains(&shifted) {
        return x * pow2i(e);
    }
    f64::from_bits((bits & !(0x7FF << 52)) | ((shifted as u64) << 52))
}

/// `W x` for EXP8 weights: each term is `x_j` with its exponent shifted by
/// the stored exponent and its sign flipped by the sign bit. Accumulation
/// matches the float matvec; zero weights are skipped.
pub fn matvec_shift(p: &PackedWeights, x: &[f64]) -> Result<Vec<f64>> {
    if p.encoding != Encoding::Exp8 {
        return Err(Error::Parameter(format!("matvec_shift needs EXP8, got {}", p.encoding.name())));
    }
    p.check_input(x)?;
    if p.cols == 0 {
        return Ok(vec![0.0; p.rows]);
    }
    Ok(p.payload
        .chunks_exact(p.cols)
        .map(|row| {
            let mut acc = 0.0;
            for (&code, &xj) in row.iter().zip(x) {
                let field = code & 0x7F;
                let term = shift_scale(xj, field as i32 - EXP8_BIAS);
                acc += signed_or_zero(term, (code >> 7) as u64, (field != EXP8_ZERO) as u64);
            }
            acc
        })
        .collect())
}

fn matvec_f64(p: &PackedWeights, x: &[f64]) -> Result<Vec<f64>> {
    p.check_input(x)?;
    Ok((0..p.rows)
        .map(|i| (0..p.cols).fold(0.0, |acc, j| acc + p.get(i, j) * x[j]))
        .collect())
}

impl LinearWeights for PackedWeights {
    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.encoding {
            Encoding::Tern2 => matvec_ternary(self, x),
            Encoding::Exp8 => matvec_shift(self, x),
            Encoding::F64 => matvec_f64(self, x),
        }
    }

    fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    fn values(&self) -> Vec<f64> {
        self.unpack().data().to_vec()
    }
}

/// Serializes named tensors into a QRNN container.
pub fn encode_container(tensors: &[(String, PackedWeights)]) -> Result<Vec<u8>> {
    let u32_of = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} does not fit in u32")))
    };
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(tensors.len(), "tensor count")?.to_le_bytes());
    for (name, p) in tensors {
        out.extend_from_slice(&u32_of(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(p.encoding.tag());
        out.extend_from_slice(&u32_of(p.rows, "rows")?.to_le_bytes());
        out.extend_from_slice(&u32_of(p.cols, "cols")?.to_le_bytes());
        out.extend_from_slice(&p.payload);
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("container truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses a QRNN container.
pub fn decode_container(bytes: &[u8]) -> Result<Vec<(String, PackedWeights)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != CONTAINER_MAGIC {
        return Err(Error::Format("not a QRNN container (bad magic)".into()));
    }
    let version = cur.u32("version")?;
    if version != CONTAINER_VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported QRNN version {version}, expected {CONTAINER_VERSION}"
        )));
    }
    let count = cur.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for k in 0..count {
        let len = cur.u32("name length")?;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| Error::Format(format!("tensor {k} name is not UTF-8")))?
            .to_string();
        let encoding = Encoding::from_tag(cur.take(1, "encoding")?[0])?;
        let rows = cur.u32("rows")?;
        let cols = cur.u32("cols")?;
        let size = rows
            .checked_mul(encoding.row_bytes(cols))
            .ok_or_else(|| Error::Format(format!("tensor {name:?} is too large")))?;
        let payload = cur.take(size, "payload")?.to_vec();
        let p = PackedWeights::from_raw(encoding, rows, cols, payload)
            .map_err(|e| Error::Format(format!("tensor {name:?}: {e}")))?;
        tensors.push((name, p));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after container", bytes.len() - cur.pos)));
    }
    Ok(tensors)
}

/// A network whose weights live in packed form.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredNetwork {
    CharLm(VanillaRnnLm<PackedWeights>),
    SeqClass(GruClassifier<PackedWeights>),
}

/// Contents of a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub network: StoredNetwork,
    /// Feature normalization fitted on the training split, if any.
    pub whitening: Option<WhiteningStats>,
    /// Byte value of each symbol index, for character models.
    pub alphabet: Option<Vec<u8>>,
}

impl StoredModel {
    pub fn tensors(&self) -> Vec<(&'static str, &PackedWeights)> {
        match &self.network {
            StoredNetwork::CharLm(m) => m.named().to_vec(),
            StoredNetwork::SeqClass(m) => m.named().to_vec(),
        }
    }

    /// Unpacked copy of the weights.
    pub fn unpacked(&self) -> Result<UnpackedNetwork> {
        Ok(match &self.network {
            StoredNetwork::CharLm(m) => UnpackedNetwork::CharLm(m.try_map(|_, p| Ok(p.unpack()))?),
            StoredNetwork::SeqClass(m) => UnpackedNetwork::SeqClass(m.try_map(|_, p| Ok(p.unpack()))?),
        })
    }

    /// Packs an in-memory network, choosing each tensor's encoding with
    /// `encoding_of(name)`.
    pub fn pack(network: &UnpackedNetwork, mut encoding_of: impl FnMut(&str) -> Encoding) -> Result<Self> {
        let network = match network {
            UnpackedNetwork::CharLm(m) => StoredNetwork::CharLm(m.try_map(|n, w| pack(w, encoding_of(n)))?),
            UnpackedNetwork::SeqClass(m) => StoredNetwork::SeqClass(m.try_map(|n, w| pack(w, encoding_of(n)))?),
        };
        Ok(Self {
            network,
            whitening: None,
            alphabet: None,
        })
    }

    pub fn with_whitening(mut self, whitening: Option<WhiteningStats>) -> Self {
        self.whitening = whitening;
        self
    }

    pub fn with_alphabet(mut self, alphabet: Option<Vec<u8>>) -> Self {
        self.alphabet = alphabet;
        self
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut named: Vec<(String, PackedWeights)> =
            self.tensors().into_iter().map(|(n, p)| (n.to_string(), p.clone())).collect();
        if let Some(w) = &self.whitening {
            for (name, v) in [(WHITEN_MEAN, &w.mean), (WHITEN_STD, &w.std)] {
                let t = Tensor::from_vec(v.len(), 1, v.clone())?;
                named.push((name.to_string(), pack(&t, Encoding::F64)?));
            }
        }
        if let Some(a) = &self.alphabet {
            let t = Tensor::from_vec(1, a.len(), a.iter().map(|&b| b as f64).collect())?;
            named.push((ALPHABET.to_string(), pack(&t, Encoding::F64)?));
        }
        encode_container(&named)
    }

    /// Rebuilds a model from container contents; the architecture follows
    /// from the tensor names.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut tensors = decode_container(bytes)?;
        let mean = take_named(&mut tensors, WHITEN_MEAN);
        let std = take_named(&mut tensors, WHITEN_STD);
        let whitening = match (mean, std) {
            (None, None) => None,
            (Some(m), Some(s)) => Some(WhiteningStats {
                mean: m.unpack().data().to_vec(),
                std: s.unpack().data().to_vec(),
            }),
            _ => return Err(Error::Format("whitening needs both mean and std".into())),
        };
        let alphabet = match take_named(&mut tensors, ALPHABET) {
            None => None,
            Some(p) => Some(
                p.unpack()
                    .data()
                    .iter()
                    .map(|&v| {
                        u8::try_from(v as i64)
                            .ok()
                            .filter(|b| *b as f64 == v)
                            .ok_or_else(|| Error::Format(format!("alphabet entry {v} is not a byte")))
                    })
                    .collect::<Result<Vec<u8>>>()?,
            ),
        };
        let names: Vec<String> = tensors.iter().map(|(n, _)| n.clone()).collect();
        let has = |set: &[&str]| set.len() == names.len() && set.iter().all(|s| names.iter().any(|n| n == s));
        let mut lookup = |name: &'static str| {
            take_named(&mut tensors, name).ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))
        };
        let network = if has(&VANILLA_PARAM_NAMES) {
            let m = VanillaRnnLm::from_named(&mut lookup)?;
            m.validate()?;
            StoredNetwork::CharLm(m)
        } else if has(&GRU_PARAM_NAMES) {
            let m = GruClassifier::from_named(&mut lookup)?;
            m.validate()?;
            StoredNetwork::SeqClass(m)
        } else {
            return Err(Error::Format(format!("tensor names {names:?} match no known model")));
        };
        Ok(Self {
            network,
            whitening,
            alphabet,
        })
    }
}

fn take_named(tensors: &mut Vec<(String, PackedWeights)>, name: &str) -> Option<PackedWeights> {
    let k = tensors.iter().position(|(n, _)| n == name)?;
    Some(tensors.swap_remove(k).1)
}

/// A network with ordinary tensor weights.
#[derive(Debug, Clone, PartialEq)]
pub enum UnpackedNetwork {
    CharLm(VanillaRnnLm),
    SeqClass(GruClassifier),
}

pub fn export_model(model: &StoredModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_bytes()?)?;
    Ok(())
}

pub fn import_model(path: impl AsRef<Path>) -> Result<StoredModel> {
    StoredModel::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_vanilla;
    use crate::rng::RandomSource;

    #[test]
    fn tern2_byte_layout() {
        let p = pack(&Tensor::from_rows(&[[1.0, -1.0, 0.0, 1.0]]), Encoding::Tern2).unwrap();
        assert_eq!(p.payload(), &[0b01_00_11_01]);
        assert_eq!(p.unpack().data(), &[1.0, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn exp8_bias() {
        let p = pack(&Tensor::from_rows(&[[0.5, -0.5, 0.0, 1.0]]), Encoding::Exp8).unwrap();
        assert_eq!(p.payload(), &[62, 0x80 | 62, EXP8_ZERO, 63]);
        assert_eq!(p.unpack().data(), &[0.5, -0.5, 0.0, 1.0]);
        let ext = pack(&Tensor::from_rows(&[[pow2i(-63), -pow2i(63)]]), Encoding::Exp8).unwrap();
        assert_eq!(ext.payload(), &[0, 0xFE]);
    }

    #[test]
    fn payload_sizes() {
        let w = Tensor::zeros(3, 9);
        assert_eq!(pack(&w, Encoding::Tern2).unwrap().payload().len(), 9);
        assert_eq!(pack(&w, Encoding::Exp8).unwrap().payload().len(), 27);
        assert_eq!(pack(&w, Encoding::F64).unwrap().payload().len(), 216);
    }

    #[test]
    fn pack_rejects_out_of_set() {
        let w = Tensor::from_rows(&[[1.0, 0.0], [0.5, 1.0]]);
        match pack(&w, Encoding::Tern2) {
            Err(Error::Encoding { row, col, .. }) => assert_eq!((row, col), (1, 0)),
            other => panic!("{other:?}"),
        }
        for v in [0.75, pow2i(64), pow2i(-64), f64::NAN, f64::INFINITY] {
            assert!(matches!(
                pack(&Tensor::from_rows(&[[v]]), Encoding::Exp8),
                Err(Error::Encoding { row: 0, col: 0, .. })
            ));
        }
    }

    #[test]
    fn reserved_codes_are_format_errors() {
        assert!(matches!(PackedWeights::from_raw(Encoding::Tern2, 1, 2, vec![0b10_00]), Err(Error::Format(_))));
        assert!(matches!(PackedWeights::from_raw(Encoding::Exp8, 1, 1, vec![0xFF]), Err(Error::Format(_))));
        assert!(matches!(PackedWeights::from_raw(Encoding::Exp8, 1, 2, vec![1]), Err(Error::Format(_))));
        assert!(matches!(PackedWeights::from_raw(Encoding::Tern2, 1, 1, vec![0b01_00]), Err(Error::Format(_))));
    }

    #[test]
    fn kernel_examples() {
        let zeros = pack(&Tensor::zeros(2, 3), Encoding::Tern2).unwrap();
        assert_eq!(matvec_ternary(&zeros, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let id = pack(&Tensor::identity(3), Encoding::Tern2).unwrap();
        assert_eq!(matvec_ternary(&id, &[1.5, -2.0, 3.0]).unwrap(), vec![1.5, -2.0, 3.0]);

        let ones = pack(&Tensor::from_rows(&[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]), Encoding::Exp8).unwrap();
        assert_eq!(matvec_shift(&ones, &[1.0, 2.0, 4.0]).unwrap(), vec![7.0, 7.0]);
        let half = pack(&Tensor::from_rows(&[[0.5]]), Encoding::Exp8).unwrap();
        assert_eq!(matvec_shift(&half, &[8.0]).unwrap(), vec![4.0]);

        assert!(matches!(matvec_shift(&half, &[1.0, 2.0]), Err(Error::Dimension(_))));
        assert!(matches!(matvec_ternary(&id, &[1.0]), Err(Error::Dimension(_))));
        assert!(matches!(matvec_ternary(&half, &[1.0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn shift_fallbacks() {
        assert_eq!(shift_scale(f64::MAX, 1), f64::INFINITY);
        assert_eq!(shift_scale(f64::MIN_POSITIVE, -1), f64::MIN_POSITIVE / 2.0);
        assert_eq!(shift_scale(f64::MIN_POSITIVE / 4.0, 3), f64::MIN_POSITIVE * 2.0);
        assert_eq!(shift_scale(-0.0, 5).to_bits(), (-0.0f64).to_bits());
        assert_eq!(shift_scale(-3.0, -2), -0.75);
        assert!(shift_scale(f64::NAN, 2).is_nan());
    }

    #[test]
    fn empty_container() {
        let bytes = encode_container(&[]).unwrap();
        assert_eq!(bytes, [b'Q', b'R', b'N', b'N', 1, 0, 0, 0, 0, 0, 0, 0]);
        assert!(decode_container(&bytes).unwrap().is_empty());
    }

    #[test]
    fn container_errors() {
        let mut bytes = encode_container(&[]).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_container(&bytes), Err(Error::Format(_))));
        assert!(matches!(decode_container(b"QRNX\x01\0\0\0\0\0\0\0"), Err(Error::Format(_))));
        assert!(matches!(decode_container(b"QRNN\x01\0"), Err(Error::Format(_))));
        let mut extra = encode_container(&[]).unwrap();
        extra.push(0);
        assert!(matches!(decode_container(&extra), Err(Error::Format(_))));
    }

    #[test]
    fn model_round_trip_through_bytes() {
        let m = init_vanilla(&mut RandomSource::new(4), 5, 3, 0.2).unwrap();
        let stored = StoredModel::pack(&UnpackedNetwork::CharLm(m.clone()), |_| Encoding::F64)
            .unwrap()
            .with_alphabet(Some(b"abcde".to_vec()));
        let back = StoredModel::from_bytes(&stored.to_bytes().unwrap()).unwrap();
        assert_eq!(back, stored);
        assert_eq!(back.unpacked().unwrap(), UnpackedNetwork::CharLm(m));
    }
}
