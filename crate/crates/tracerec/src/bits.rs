//! Bit containers for sources and traces.
//!
//! Strings are packed into 64-bit words (bit `i` lives in word `i / 64` at
//! offset `i % 64`). Matrices and tensors are dense row-major byte grids; they
//! are small in every experiment and byte cells keep indexing trivial.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A binary string of arbitrary length.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            words: Vec::with_capacity(bits.div_ceil(64)),
            len: 0,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut s = Self {
            words: vec![!0; len.div_ceil(64)],
            len,
        };
        s.clear_tail();
        s
    }

    /// Builds a string from packed words; bits past `len` are cleared.
    pub fn from_words(mut words: Vec<u64>, len: usize) -> Self {
        words.resize(len.div_ceil(64), 0);
        let mut s = Self { words, len };
        s.clear_tail();
        s
    }

    pub fn from_bits<I: IntoIterator<Item = u8>>(bits: I) -> Self {
        let mut s = Self::new();
        for b in bits {
            s.push(b);
        }
        s
    }

    /// String of length `len` with ones exactly at `positions`.
    pub fn from_ones(len: usize, positions: &[usize]) -> Result<Self> {
        let mut s = Self::zeros(len);
        for &p in positions {
            if p >= len {
                return Err(Error::InvalidInput(format!(
                    "one at position {p} outside length {len}"
                )));
            }
            s.set(p, 1);
        }
        Ok(s)
    }

    fn clear_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(w) = self.words.last_mut() {
                *w &= (1u64 << r) - 1;
            }
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        ((self.words[i / 64] >> (i % 64)) & 1) as u8
    }

    #[inline]
    pub fn set(&mut self, i: usize, b: u8) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let m = 1u64 << (i % 64);
        if b != 0 {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    #[inline]
    pub fn push(&mut self, b: u8) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        if b != 0 {
            self.words[self.len / 64] |= 1 << (self.len % 64);
        }
        self.len += 1;
    }

    /// Appends the low `count` bits of `word`, least significant first.
    #[inline]
    pub fn push_word(&mut self, word: u64, count: u32) {
        if count == 0 {
            return;
        }
        let word = if count == 64 {
            word
        } else {
            word & ((1u64 << count) - 1)
        };
        let off = (self.len % 64) as u32;
        if off == 0 {
            self.words.push(word);
        } else {
            *self.words.last_mut().unwrap() |= word << off;
            if off + count > 64 {
                self.words.push(word >> (64 - off));
            }
        }
        self.len += count as usize;
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn to_vec(&self) -> Vec<u8> {
        self.iter().collect()
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn count_zeros(&self) -> usize {
        self.len - self.count_ones()
    }

    /// Number of ones in `[start, end)`, clipped to the string length.
    pub fn count_ones_range(&self, start: usize, end: usize) -> usize {
        let end = end.min(self.len);
        if start >= end {
            return 0;
        }
        let (sw, ew) = (start / 64, (end - 1) / 64);
        let lo = !0u64 << (start % 64);
        let hi = if end.is_multiple_of(64) {
            !0
        } else {
            (1u64 << (end % 64)) - 1
        };
        if sw == ew {
            return (self.words[sw] & lo & hi).count_ones() as usize;
        }
        let mut c = (self.words[sw] & lo).count_ones() as usize;
        for w in &self.words[sw + 1..ew] {
            c += w.count_ones() as usize;
        }
        c + (self.words[ew] & hi).count_ones() as usize
    }

    /// Positions of the ones in increasing order.
    pub fn ones_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }

    pub fn reversed(&self) -> Self {
        Self::from_bits((0..self.len).rev().map(|i| self.get(i)))
    }

    pub fn complemented(&self) -> Self {
        let mut s = Self {
            words: self.words.iter().map(|w| !w).collect(),
            len: self.len,
        };
        s.clear_tail();
        s
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self::from_bits((start..end.min(self.len)).map(|i| self.get(i)))
    }
}

/// Number of differing positions plus the length difference.
pub fn hamming_distance(a: &BitString, b: &BitString) -> usize {
    let common = a.len().min(b.len());
    let full = common / 64;
    let mut d: usize = a.words[..full]
        .iter()
        .zip(&b.words[..full])
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum();
    for i in full * 64..common {
        d += (a.get(i) != b.get(i)) as usize;
    }
    d + a.len().abs_diff(b.len())
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.iter().map(|b| if b == 1 { '1' } else { '0' }).collect();
        f.write_str(&s)
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString(\"{self}\")")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = BitString::with_capacity(s.len());
        for c in s.trim().chars() {
            match c {
                '0' => out.push(0),
                '1' => out.push(1),
                _ => return Err(Error::InvalidInput(format!("bad bit character {c:?}"))),
            }
        }
        Ok(out)
    }
}

impl From<BitString> for String {
    fn from(b: BitString) -> String {
        b.to_string()
    }
}

impl TryFrom<String> for BitString {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Read access shared by matrices and tensors.
pub trait DenseGrid {
    fn shape(&self) -> Vec<usize>;
    fn cells(&self) -> &[u8];
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * shape[i + 1];
    }
    st
}

/// Inverse of row-major flattening.
pub fn unflatten(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for i in (0..shape.len()).rev() {
        out[i] = flat % shape[i];
        flat /= shape[i];
    }
}

/// A dense order-k binary tensor.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct BitTensor {
    dims: Vec<usize>,
    bits: Vec<u8>,
}

impl BitTensor {
    pub fn new(dims: Vec<usize>, bits: Vec<u8>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != bits.len() {
            return Err(Error::InvalidInput(format!(
                "tensor dims {dims:?} need {n} cells, got {}",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidInput("tensor cell outside {0,1}".into()));
        }
        Ok(Self { dims, bits })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            bits: vec![0; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for (d, (&i, &n)) in idx.iter().zip(&self.dims).enumerate() {
            assert!(i < n, "index {i} out of range {n} on axis {d}");
            off = off * n + i;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> u8 {
        self.bits[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], b: u8) {
        let o = self.offset(idx);
        self.bits[o] = (b != 0) as u8;
    }

    /// Sub-tensor keeping the listed indices on every axis.
    pub fn select(&self, keep: &[Vec<usize>]) -> Self {
        assert_eq!(keep.len(), self.dims.len());
        let dims: Vec<usize> = keep.iter().map(Vec::len).collect();
        let total: usize = dims.iter().product();
        let st = strides(&self.dims);
        let mut idx = vec![0; dims.len()];
        let bits = (0..total)
            .map(|i| {
                unflatten(i, &dims, &mut idx);
                let src: usize = idx
                    .iter()
                    .enumerate()
                    .map(|(d, &j)| keep[d][j] * st[d])
                    .sum();
                self.bits[src]
            })
            .collect();
        Self { dims, bits }
    }
}

impl DenseGrid for BitTensor {
    fn shape(&self) -> Vec<usize> {
        self.dims.clone()
    }
    fn cells(&self) -> &[u8] {
        &self.bits
    }
}

fn write_grid(f: &mut fmt::Formatter<'_>, dims: &[usize], bits: &[u8]) -> fmt::Result {
    let head: Vec<String> = dims.iter().map(usize::to_string).collect();
    write!(f, "{}:", head.join("x"))?;
    let k = dims.len();
    let st = strides(dims);
    for (i, &b) in bits.iter().enumerate() {
        if i > 0 && k >= 2 {
            // outermost axis whose index rolled over at this cell
            if let Some(a) = (0..k - 1).find(|&a| i % st[a] == 0) {
                if a == k - 2 {
                    f.write_str(";")?;
                } else {
                    f.write_str(&"|".repeat(k - 2 - a))?;
                }
            }
        }
        f.write_str(if b == 1 { "1" } else { "0" })?;
    }
    Ok(())
}

fn parse_grid(s: &str) -> Result<(Vec<usize>, Vec<u8>)> {
    let s = s.trim();
    let (head, body) = s
        .split_once(':')
        .ok_or_else(|| Error::InvalidInput(format!("missing dims prefix in {s:?}")))?;
    let dims = head
        .split('x')
        .map(|d| {
            d.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidInput(format!("bad extent {d:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut bits = Vec::with_capacity(body.len());
    for c in body.chars() {
        match c {
            '0' => bits.push(0),
            '1' => bits.push(1),
            ';' | '|' => {}
            _ => return Err(Error::InvalidInput(format!("bad grid character {c:?}"))),
        }
    }
    Ok((dims, bits))
}

impl fmt::Display for BitTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_grid(f, &self.dims, &self.bits)
    }
}

impl fmt::Debug for BitTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitTensor({self})")
    }
}

impl FromStr for BitTensor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (dims, bits) = parse_grid(s)?;
        Self::new(dims, bits)
    }
}

impl From<BitTensor> for String {
    fn from(t: BitTensor) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for BitTensor {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A dense binary matrix, stored row-major.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
}

impl BitMatrix {
    pub fn new(rows: usize, cols: usize, bits: Vec<u8>) -> Result<Self> {
        if rows * cols != bits.len() {
            return Err(Error::InvalidInput(format!(
                "matrix {rows}x{cols} needs {} cells, got {}",
                rows * cols,
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidInput("matrix cell outside {0,1}".into()));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        assert!(r < self.rows && c < self.cols);
        self.bits[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, b: u8) {
        assert!(r < self.rows && c < self.cols);
        self.bits[r * self.cols + c] = (b != 0) as u8;
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_string(&self, r: usize) -> BitString {
        BitString::from_bits(self.row(r).iter().copied())
    }

    pub fn col_string(&self, c: usize) -> BitString {
        BitString::from_bits((0..self.rows).map(|r| self.get(r, c)))
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.bits[c * self.rows + r] = self.bits[r * self.cols + c];
            }
        }
        t
    }

    pub fn to_tensor(&self) -> BitTensor {
        BitTensor {
            dims: vec![self.rows, self.cols],
            bits: self.bits.clone(),
        }
    }

    pub fn from_tensor(t: &BitTensor) -> Result<Self> {
        if t.order() != 2 {
            return Err(Error::InvalidInput(format!(
                "expected an order-2 tensor, got order {}",
                t.order()
            )));
        }
        Self::new(t.dims[0], t.dims[1], t.bits.clone())
    }

    /// Integer whose binary digits, most significant first, are the cells in
    /// row-major order. Only meaningful for at most 64 cells.
    pub fn to_index(&self) -> u64 {
        self.bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }

    pub fn from_index(rows: usize, cols: usize, index: u64) -> Self {
        let n = rows * cols;
        let bits = (0..n).map(|i| ((index >> (n - 1 - i)) & 1) as u8).collect();
        Self { rows, cols, bits }
    }
}

impl DenseGrid for BitMatrix {
    fn shape(&self) -> Vec<usize> {
        vec![self.rows, self.cols]
    }
    fn cells(&self) -> &[u8] {
        &self.bits
    }
}

impl fmt::Display for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_grid(f, &[self.rows, self.cols], &self.bits)
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitMatrix({self})")
    }
}

impl FromStr for BitMatrix {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (dims, bits) = parse_grid(s)?;
        if dims.len() != 2 {
            return Err(Error::InvalidInput(format!(
                "matrix needs two extents, got {dims:?}"
            )));
        }
        Self::new(dims[0], dims[1], bits)
    }
}

impl From<BitMatrix> for String {
    fn from(m: BitMatrix) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for BitMatrix {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}
