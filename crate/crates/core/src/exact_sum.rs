//! Exact accumulation of nonnegative doubles.
//!
//! A fixed-point superaccumulator wide enough to hold any sum of up to 2^64
//! finite nonnegative `f64` values without rounding. Because addition of the
//! underlying integers is exact, merging accumulators is associative and
//! commutative bit-for-bit, which is what lets Monte Carlo estimates be
//! pooled over chunks in any grouping and still round to the same double.

/// Bit `i` of the integer has weight `2^(i - 1074)`.
const LIMBS: usize = 35;
const MANT_BITS: u32 = 52;

#[derive(Clone, PartialEq, Eq)]
pub struct ExactSum {
    limbs: [u64; LIMBS],
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for ExactSum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ExactSum({:e})", self.value())
    }
}

impl ExactSum {
    pub const fn new() -> Self {
        Self { limbs: [0; LIMBS] }
    }

    pub fn is_zero(&self) -> bool {
        self.limbs.iter().all(|&l| l == 0)
    }

    fn add_at(&mut self, mut index: usize, value: u64) {
        let (s, mut carry) = self.limbs[index].overflowing_add(value);
        self.limbs[index] = s;
        while carry {
            index += 1;
            let (s, c) = self.limbs[index].overflowing_add(1);
            self.limbs[index] = s;
            carry = c;
        }
    }

    /// Adds a finite nonnegative value.
    ///
    /// # Panics
    /// On negative, NaN or infinite input.
    pub fn add(&mut self, v: f64) {
        assert!(v >= 0.0 && v.is_finite(), "ExactSum::add({v})");
        if v == 0.0 {
            return;
        }
        let bits = v.to_bits();
        let biased = (bits >> MANT_BITS) & 0x7ff;
        let frac = bits & ((1u64 << MANT_BITS) - 1);
        let (mant, pos) = if biased == 0 {
            (frac, 0usize)
        } else {
            (frac | (1u64 << MANT_BITS), biased as usize - 1)
        };
        let limb = pos / 64;
        let off = pos % 64;
        self.add_at(limb, mant << off);
        if off != 0 {
            let hi = mant >> (64 - off);
            if hi != 0 {
                self.add_at(limb + 1, hi);
            }
        }
    }

    /// Adds another accumulator in place.
    pub fn absorb(&mut self, other: &ExactSum) {
        let mut carry = false;
        for (a, &b) in self.limbs.iter_mut().zip(other.limbs.iter()) {
            let (s1, c1) = a.overflowing_add(b);
            let (s2, c2) = s1.overflowing_add(carry as u64);
            *a = s2;
            carry = c1 || c2;
        }
        assert!(!carry, "ExactSum overflow");
    }

    fn bit(&self, i: usize) -> bool {
        (self.limbs[i / 64] >> (i % 64)) & 1 == 1
    }

    fn any_below(&self, i: usize) -> bool {
        let limb = i / 64;
        let off = i % 64;
        if self.limbs[..limb].iter().any(|&l| l != 0) {
            return true;
        }
        off != 0 && self.limbs[limb] & ((1u64 << off) - 1) != 0
    }

    fn bits_from(&self, lo: usize) -> u64 {
        let limb = lo / 64;
        let off = lo % 64;
        let mut v = self.limbs[limb] >> off;
        if off != 0 && limb + 1 < LIMBS {
            v |= self.limbs[limb + 1] << (64 - off);
        }
        v & ((1u64 << (MANT_BITS + 1)) - 1)
    }

    /// The sum correctly rounded to the nearest double (ties to even).
    pub fn value(&self) -> f64 {
        let Some(h) = self.limbs.iter().rposition(|&l| l != 0) else {
            return 0.0;
        };
        let top = 64 * h + 63 - self.limbs[h].leading_zeros() as usize;
        if top <= MANT_BITS as usize {
            // fits in 53 bits: exact subnormal or smallest normal binade
            return self.limbs[0] as f64 * f64::from_bits(1);
        }
        let lo = top - MANT_BITS as usize;
        let mut mant = self.bits_from(lo);
        let round = self.bit(lo - 1);
        let sticky = self.any_below(lo - 1);
        let mut top = top;
        if round && (sticky || mant & 1 == 1) {
            mant += 1;
            if mant == 1u64 << (MANT_BITS + 1) {
                mant >>= 1;
                top += 1;
            }
        }
        let biased = top as u64 - 51;
        if biased >= 0x7ff {
            return f64::INFINITY;
        }
        f64::from_bits((biased << MANT_BITS) | (mant & ((1u64 << MANT_BITS) - 1)))
    }
}

impl std::ops::AddAssign<f64> for ExactSum {
    fn add_assign(&mut self, v: f64) {
        self.add(v);
    }
}
