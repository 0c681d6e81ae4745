//! Order-independent accumulation of `f64` terms.
//!
//! Each term is truncated to a fixed-point grid of 2⁻⁷⁰, split into a high
//! part (multiples of 2⁻³⁰) and a low remainder, and both are summed as
//! integers. The total therefore does not depend on summation order, and a
//! negated term cancels its original exactly. The absolute values of the
//! terms must sum to less than 2³³ and a sum may hold at most 2²³ terms.

const HI: f64 = 1_073_741_824.0; // 2^30
const LO: f64 = 1_099_511_627_776.0; // 2^40
const INV: f64 = 1.0 / (HI * LO);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FixedSum {
    hi: i64,
    lo: i64,
}

impl FixedSum {
    /// The single term `v`, truncated to the fixed-point grid.
    #[inline]
    pub fn of(v: f64) -> Self {
        debug_assert!(v.abs() < 4_294_967_296.0, "term {v} too large for FixedSum");
        let a = v * HI;
        let hi = a as i64;
        let lo = ((a - hi as f64) * LO) as i64;
        Self { hi, lo }
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        self.merge(Self::of(v));
    }

    #[inline]
    pub fn sub(&mut self, v: f64) {
        self.unmerge(Self::of(v));
    }

    #[inline]
    pub fn unmerge(&mut self, other: FixedSum) {
        self.hi -= other.hi;
        self.lo -= other.lo;
    }

    #[inline]
    pub fn merge(&mut self, other: FixedSum) {
        self.hi += other.hi;
        self.lo += other.lo;
    }

    #[inline]
    pub fn value(self) -> f64 {
        let total = ((self.hi as i128) << 40) + self.lo as i128;
        total as f64 * INV
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FixedSum2 {
    pub x: FixedSum,
    pub y: FixedSum,
}

impl FixedSum2 {
    #[inline]
    pub fn of(v: crate::Vec2) -> Self {
        Self {
            x: FixedSum::of(v.x),
            y: FixedSum::of(v.y),
        }
    }

    #[inline]
    pub fn add(&mut self, v: crate::Vec2) {
        self.merge(Self::of(v));
    }

    #[inline]
    pub fn unmerge(&mut self, other: FixedSum2) {
        self.x.unmerge(other.x);
        self.y.unmerge(other.y);
    }

    #[inline]
    pub fn sub(&mut self, v: crate::Vec2) {
        self.x.sub(v.x);
        self.y.sub(v.y);
    }

    #[inline]
    pub fn merge(&mut self, other: FixedSum2) {
        self.x.merge(other.x);
        self.y.merge(other.y);
    }

    #[inline]
    pub fn value(self) -> crate::Vec2 {
        crate::Vec2::new(self.x.value(), self.y.value())
    }
}
