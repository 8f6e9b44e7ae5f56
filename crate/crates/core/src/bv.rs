//! Fixed-capacity bitvector values (up to 512 bits) with modular arithmetic.

use std::cmp::Ordering;
use std::fmt;

/// Widest bitvector the crate handles.
pub const MAX_WIDTH: u32 = 512;

const LIMBS: usize = (MAX_WIDTH / 64) as usize;

/// A concrete bitvector of `width` bits, little-endian limbs, always reduced
/// modulo `2^width`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BvValue {
    width: u32,
    limbs: [u64; LIMBS],
}

fn limb_count(width: u32) -> usize {
    width.div_ceil(64) as usize
}

impl BvValue {
    /// Zero of the given width. Panics if the width is outside `1..=512`.
    pub fn zero(width: u32) -> Self {
        assert!(
            (1..=MAX_WIDTH).contains(&width),
            "bitvector width {width} out of range"
        );
        BvValue {
            width,
            limbs: [0; LIMBS],
        }
    }

    pub fn from_u64(value: u64, width: u32) -> Self {
        let mut v = Self::zero(width);
        v.limbs[0] = value;
        v.normalize()
    }

    pub fn from_u128(value: u128, width: u32) -> Self {
        let mut v = Self::zero(width);
        v.limbs[0] = value as u64;
        if LIMBS > 1 {
            v.limbs[1] = (value >> 64) as u64;
        }
        v.normalize()
    }

    /// Two's-complement encoding of a signed integer.
    pub fn from_i128(value: i128, width: u32) -> Self {
        let mut v = Self::zero(width);
        v.limbs[0] = value as u64;
        v.limbs[1] = (value >> 64) as u64;
        let fill = if value < 0 { u64::MAX } else { 0 };
        for l in v.limbs.iter_mut().skip(2) {
            *l = fill;
        }
        v.normalize()
    }

    pub fn from_bool(b: bool) -> Self {
        Self::from_u64(b as u64, 1)
    }

    /// Builds a value from little-endian limbs; extra limbs and bits are truncated.
    pub fn from_limbs(limbs: &[u64], width: u32) -> Self {
        let mut v = Self::zero(width);
        for (dst, src) in v.limbs.iter_mut().zip(limbs) {
            *dst = *src;
        }
        v.normalize()
    }

    pub fn ones(width: u32) -> Self {
        Self::zero(width).not()
    }

    fn normalize(mut self) -> Self {
        let n = limb_count(self.width);
        for l in self.limbs.iter_mut().skip(n) {
            *l = 0;
        }
        let rem = self.width % 64;
        if rem != 0 {
            self.limbs[n - 1] &= (1u64 << rem) - 1;
        }
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn limbs(&self) -> &[u64] {
        &self.limbs[..limb_count(self.width)]
    }

    pub fn is_zero(&self) -> bool {
        self.limbs.iter().all(|l| *l == 0)
    }

    pub fn is_true(&self) -> bool {
        !self.is_zero()
    }

    pub fn bit(&self, i: u32) -> bool {
        i < self.width && (self.limbs[(i / 64) as usize] >> (i % 64)) & 1 == 1
    }

    fn sign_bit(&self) -> bool {
        self.bit(self.width - 1)
    }

    /// Number of significant bits (0 for zero).
    pub fn bit_len(&self) -> u32 {
        for i in (0..LIMBS).rev() {
            if self.limbs[i] != 0 {
                return i as u32 * 64 + (64 - self.limbs[i].leading_zeros());
            }
        }
        0
    }

    /// Low 64 bits.
    pub fn low_u64(&self) -> u64 {
        self.limbs[0]
    }

    pub fn to_u64(&self) -> Option<u64> {
        (self.bit_len() <= 64).then_some(self.limbs[0])
    }

    pub fn to_u128(&self) -> Option<u128> {
        (self.bit_len() <= 128).then(|| self.limbs[0] as u128 | (self.limbs[1] as u128) << 64)
    }

    pub fn add(&self, rhs: &Self) -> Self {
        debug_assert_eq!(self.width, rhs.width);
        let mut out = Self::zero(self.width);
        let mut carry = false;
        for i in 0..limb_count(self.width) {
            let (s1, c1) = self.limbs[i].overflowing_add(rhs.limbs[i]);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            out.limbs[i] = s2;
            carry = c1 || c2;
        }
        out.normalize()
    }

    pub fn neg(&self) -> Self {
        self.not().add(&Self::from_u64(1, self.width))
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.add(&rhs.neg())
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        debug_assert_eq!(self.width, rhs.width);
        let n = limb_count(self.width);
        let mut out = Self::zero(self.width);
        for i in 0..n {
            if self.limbs[i] == 0 {
                continue;
            }
            let mut carry: u128 = 0;
            for j in 0..n - i {
                let t = self.limbs[i] as u128 * rhs.limbs[j] as u128
                    + out.limbs[i + j] as u128
                    + carry;
                out.limbs[i + j] = t as u64;
                carry = t >> 64;
            }
        }
        out.normalize()
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        debug_assert_eq!(self.width, rhs.width);
        let mut out = Self::zero(self.width);
        for i in 0..limb_count(self.width) {
            out.limbs[i] = f(self.limbs[i], rhs.limbs[i]);
        }
        out.normalize()
    }

    pub fn and(&self, rhs: &Self) -> Self {
        self.zip_with(rhs, |a, b| a & b)
    }

    pub fn or(&self, rhs: &Self) -> Self {
        self.zip_with(rhs, |a, b| a | b)
    }

    pub fn xor(&self, rhs: &Self) -> Self {
        self.zip_with(rhs, |a, b| a ^ b)
    }

    pub fn not(&self) -> Self {
        let mut out = *self;
        for l in out.limbs.iter_mut() {
            *l = !*l;
        }
        out.normalize()
    }

    pub fn ucmp(&self, rhs: &Self) -> Ordering {
        for i in (0..LIMBS).rev() {
            match self.limbs[i].cmp(&rhs.limbs[i]) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }

    pub fn scmp(&self, rhs: &Self) -> Ordering {
        match (self.sign_bit(), rhs.sign_bit()) {
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            _ => self.ucmp(rhs),
        }
    }

    pub fn shr(&self, bits: u32) -> Self {
        let mut out = Self::zero(self.width);
        let word = (bits / 64) as usize;
        let shift = bits % 64;
        for i in 0..LIMBS {
            let src = i + word;
            if src >= LIMBS {
                break;
            }
            let mut v = self.limbs[src] >> shift;
            if shift != 0 && src + 1 < LIMBS {
                v |= self.limbs[src + 1] << (64 - shift);
            }
            out.limbs[i] = v;
        }
        out
    }

    fn shl_raw(&self, bits: u32) -> [u64; LIMBS] {
        let mut out = [0u64; LIMBS];
        let word = (bits / 64) as usize;
        let shift = bits % 64;
        for i in (word..LIMBS).rev() {
            let src = i - word;
            let mut v = self.limbs[src] << shift;
            if shift != 0 && src >= 1 {
                v |= self.limbs[src - 1] >> (64 - shift);
            }
            out[i] = v;
        }
        out
    }

    /// Bits `hi..=lo` as a value of width `hi - lo + 1`.
    pub fn extract(&self, hi: u32, lo: u32) -> Self {
        debug_assert!(hi >= lo && hi < self.width);
        let shifted = self.shr(lo);
        Self::from_limbs(&shifted.limbs, hi - lo + 1)
    }

    pub fn zero_extend(&self, by: u32) -> Self {
        Self::from_limbs(&self.limbs, self.width + by)
    }

    pub fn sign_extend(&self, by: u32) -> Self {
        let wide = self.zero_extend(by);
        if !self.sign_bit() || by == 0 {
            return wide;
        }
        let fill = Self::ones(by).zero_extend(self.width);
        let fill = Self::from_limbs(&fill.shl_raw(self.width), self.width + by);
        wide.or(&fill)
    }

    /// `self` provides the high bits, `low` the low bits.
    pub fn concat(&self, low: &Self) -> Self {
        let width = self.width + low.width;
        let hi = Self::from_limbs(&self.limbs, width);
        let hi = Self::from_limbs(&hi.shl_raw(low.width), width);
        hi.or(&low.zero_extend(self.width))
    }

    /// Signed interpretation, if it fits in an `i128`.
    pub fn to_i128(&self) -> Option<i128> {
        if self.sign_bit() {
            let mag = self.neg();
            let m = mag.to_u128()?;
            if m > i128::MAX as u128 + 1 {
                return None;
            }
            Some((m as i128).wrapping_neg())
        } else {
            self.to_u128().and_then(|v| i128::try_from(v).ok())
        }
    }

    /// Fixed-width hexadecimal digits (no prefix), `width / 4` characters.
    /// Only meaningful when the width is a multiple of 4.
    pub fn to_hex_digits(&self) -> String {
        let digits = self.width.div_ceil(4) as usize;
        let mut s = String::with_capacity(digits);
        for d in (0..digits).rev() {
            let nib = (self.limbs[d / 16] >> ((d % 16) * 4)) & 0xF;
            s.push(char::from_digit(nib as u32, 16).unwrap());
        }
        s
    }

    pub fn to_bin_digits(&self) -> String {
        (0..self.width)
            .rev()
            .map(|i| if self.bit(i) { '1' } else { '0' })
            .collect()
    }

    /// Parses digits in the given radix (2, 10 or 16) into a value of
    /// `width` bits. Returns `None` on bad digits or overflow.
    pub fn parse_radix(digits: &str, radix: u32, width: u32) -> Option<Self> {
        if digits.is_empty() || !(1..=MAX_WIDTH).contains(&width) {
            return None;
        }
        // accumulate at full capacity, then check that nothing spilled past `width`
        let mut acc = [0u64; LIMBS];
        for ch in digits.chars() {
            let d = ch.to_digit(radix)? as u128;
            let mut carry = d;
            for limb in acc.iter_mut() {
                let t = *limb as u128 * radix as u128 + carry;
                *limb = t as u64;
                carry = t >> 64;
            }
            if carry != 0 {
                return None;
            }
        }
        let full = BvValue {
            width: MAX_WIDTH,
            limbs: acc,
        };
        if full.bit_len() > width {
            return None;
        }
        Some(Self::from_limbs(&acc, width))
    }

    /// Decimal rendering.
    pub fn to_decimal(&self) -> String {
        if self.is_zero() {
            return "0".into();
        }
        let mut limbs = self.limbs;
        let mut digits = Vec::new();
        while limbs.iter().any(|l| *l != 0) {
            let mut rem: u128 = 0;
            for l in limbs.iter_mut().rev() {
                let cur = (rem << 64) | *l as u128;
                *l = (cur / 10) as u64;
                rem = cur % 10;
            }
            digits.push(b'0' + rem as u8);
        }
        digits.reverse();
        String::from_utf8(digits).unwrap()
    }
}

impl fmt::Debug for BvValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}:{}", self.to_hex_digits(), self.width)
    }
}

impl fmt::Display for BvValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
