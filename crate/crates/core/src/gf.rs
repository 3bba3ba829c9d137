//! Arithmetic in GF(2^t) for 1 <= t <= 16, plus the small amount of linear
//! algebra (rank, solve) the MDS decoder and the index-code checks need.
//!
//! Elements are stored as the coefficient bitmask of a polynomial over GF(2),
//! bit i holding the coefficient of x^i. Multiplication is plain shift-and-XOR
//! with reduction by the field's irreducible polynomial.

use crate::error::{Error, Result};

pub const MAX_WIDTH: u32 = 16;

/// Default reduction polynomial for each width, indexed by t.
const DEFAULT_POLYS: [u32; 17] = [
    0, 0x3,     // x + 1
    0x7,     // x^2 + x + 1
    0xB,     // x^3 + x + 1
    0x13,    // x^4 + x + 1
    0x25,    // x^5 + x^2 + 1
    0x43,    // x^6 + x + 1
    0x83,    // x^7 + x + 1
    0x11B,   // x^8 + x^4 + x^3 + x + 1
    0x211,   // x^9 + x^4 + 1
    0x409,   // x^10 + x^3 + 1
    0x805,   // x^11 + x^2 + 1
    0x1053,  // x^12 + x^6 + x^4 + x + 1
    0x201B,  // x^13 + x^4 + x^3 + x + 1
    0x4443,  // x^14 + x^10 + x^6 + x + 1
    0x8003,  // x^15 + x + 1
    0x1100B, // x^16 + x^12 + x^3 + x + 1
];

/// A binary extension field GF(2^t) with a fixed reduction polynomial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FieldSpec {
    t: u32,
    poly: u32,
}

impl FieldSpec {
    /// The field of width `t` using the default polynomial table.
    pub fn new(t: u32) -> Result<Self> {
        if t == 0 || t > MAX_WIDTH {
            return Err(Error::param(format!(
                "field width {t} outside 1..={MAX_WIDTH}"
            )));
        }
        Ok(FieldSpec {
            t,
            poly: DEFAULT_POLYS[t as usize],
        })
    }

    pub fn with_poly(t: u32, poly: u32) -> Result<Self> {
        if t == 0 || t > MAX_WIDTH {
            return Err(Error::param(format!(
                "field width {t} outside 1..={MAX_WIDTH}"
            )));
        }
        if degree(poly) != Some(t) {
            return Err(Error::param(format!(
                "polynomial {poly:#x} does not have degree {t}"
            )));
        }
        if !is_irreducible(poly) {
            return Err(Error::param(format!(
                "polynomial {poly:#x} is reducible over GF(2)"
            )));
        }
        Ok(FieldSpec { t, poly })
    }

    /// Smallest field with at least `n` elements.
    pub fn at_least(n: u64) -> Result<Self> {
        let t = (1..=MAX_WIDTH)
            .find(|&t| (1u64 << t) >= n)
            .ok_or_else(|| Error::param(format!("no supported field has {n} elements")))?;
        FieldSpec::new(t)
    }

    pub fn width(&self) -> u32 {
        self.t
    }

    pub fn poly(&self) -> u32 {
        self.poly
    }

    pub fn order(&self) -> u64 {
        1u64 << self.t
    }

    /// Bytes used to serialize one element.
    pub fn byte_len(&self) -> usize {
        self.t.div_ceil(8) as usize
    }

    pub fn contains(&self, v: u32) -> bool {
        (v as u64) < self.order()
    }

    pub fn element(&self, v: u32) -> Result<FieldElement> {
        FieldElement::new(v, self.t)
    }

    #[inline]
    pub fn add(&self, a: u32, b: u32) -> u32 {
        a ^ b
    }

    /// Carry-less product reduced modulo the field polynomial.
    #[inline]
    pub fn mul(&self, a: u32, b: u32) -> u32 {
        debug_assert!(self.contains(a) && self.contains(b));
        let top = 1u32 << self.t;
        let (mut a, mut b, mut acc) = (a, b, 0u32);
        while b != 0 {
            if b & 1 != 0 {
                acc ^= a;
            }
            b >>= 1;
            a <<= 1;
            if a & top != 0 {
                a ^= self.poly;
            }
        }
        acc
    }

    pub fn pow(&self, a: u32, mut e: u64) -> u32 {
        let (mut base, mut acc) = (a, 1u32);
        while e != 0 {
            if e & 1 != 0 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse, a^(2^t - 2).
    pub fn inv(&self, a: u32) -> Result<u32> {
        if a == 0 {
            return Err(Error::DivisionByZero(self.t));
        }
        Ok(self.pow(a, self.order() - 2))
    }

    pub fn div(&self, a: u32, b: u32) -> Result<u32> {
        Ok(self.mul(a, self.inv(b)?))
    }
}

/// A single element of GF(2^t), tagged with its width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElement {
    value: u32,
    width: u32,
}

impl FieldElement {
    pub fn new(value: u32, width: u32) -> Result<Self> {
        if width == 0 || width > MAX_WIDTH {
            return Err(Error::param(format!(
                "field width {width} outside 1..={MAX_WIDTH}"
            )));
        }
        if value >> width != 0 {
            return Err(Error::param(format!(
                "value {value:#x} does not fit in {width} bits"
            )));
        }
        Ok(FieldElement { value, width })
    }

    pub fn zero(width: u32) -> Result<Self> {
        FieldElement::new(0, width)
    }

    pub fn value(&self) -> u32 {
        self.value
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Big-endian, in ceil(t/8) bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.width.div_ceil(8) as usize;
        self.value.to_be_bytes()[4 - n..].to_vec()
    }

    pub fn from_bytes(bytes: &[u8], width: u32) -> Result<Self> {
        let n = width.div_ceil(8) as usize;
        if bytes.len() != n {
            return Err(Error::malformed(format!(
                "expected {n} bytes for a {width}-bit element, got {}",
                bytes.len()
            )));
        }
        let value = bytes.iter().fold(0u32, |acc, &b| (acc << 8) | b as u32);
        FieldElement::new(value, width)
    }
}

fn check_width(a: FieldElement, b: FieldElement) -> Result<()> {
    if a.width != b.width {
        return Err(Error::WidthMismatch(a.width, b.width));
    }
    Ok(())
}

fn check_field(a: FieldElement, field: &FieldSpec) -> Result<()> {
    if a.width != field.t {
        return Err(Error::WidthMismatch(a.width, field.t));
    }
    Ok(())
}

pub fn add(a: FieldElement, b: FieldElement) -> Result<FieldElement> {
    check_width(a, b)?;
    Ok(FieldElement {
        value: a.value ^ b.value,
        width: a.width,
    })
}

pub fn mul(a: FieldElement, b: FieldElement, field: &FieldSpec) -> Result<FieldElement> {
    check_width(a, b)?;
    check_field(a, field)?;
    Ok(FieldElement {
        value: field.mul(a.value, b.value),
        width: a.width,
    })
}

pub fn inv(a: FieldElement, field: &FieldSpec) -> Result<FieldElement> {
    check_field(a, field)?;
    Ok(FieldElement {
        value: field.inv(a.value)?,
        width: a.width,
    })
}

fn degree(p: u32) -> Option<u32> {
    (p != 0).then(|| 31 - p.leading_zeros())
}

/// Remainder of polynomial division over GF(2).
fn poly_rem(mut a: u32, b: u32) -> u32 {
    let db = degree(b).expect("nonzero divisor");
    while let Some(da) = degree(a) {
        if da < db {
            break;
        }
        a ^= b << (da - db);
    }
    a
}

/// Trial division by every polynomial of degree 1..=deg/2.
pub fn is_irreducible(poly: u32) -> bool {
    let Some(d) = degree(poly) else { return false };
    if d == 0 {
        return false;
    }
    for divisor in 2u32..(1u32 << (d / 2 + 1)) {
        if degree(divisor).unwrap() > d / 2 {
            break;
        }
        if poly_rem(poly, divisor) == 0 {
            return false;
        }
    }
    true
}

/// Rank of a matrix over GF(2^t), rows given as coefficient vectors.
pub fn rank(rows: &[Vec<u32>], field: &FieldSpec) -> usize {
    let mut m: Vec<Vec<u32>> = rows.to_vec();
    let cols = m.first().map_or(0, Vec::len);
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..m.len()).find(|&i| m[i][c] != 0) else {
            continue;
        };
        m.swap(r, p);
        let pinv = field.inv(m[r][c]).expect("pivot is nonzero");
        for x in m[r].iter_mut() {
            *x = field.mul(*x, pinv);
        }
        for i in 0..m.len() {
            if i != r && m[i][c] != 0 {
                let f = m[i][c];
                for j in 0..cols {
                    let v = field.mul(f, m[r][j]);
                    m[i][j] ^= v;
                }
            }
        }
        r += 1;
        if r == m.len() {
            break;
        }
    }
    r
}

/// Solves `a * x = b` for square `a`, where each entry of `b` is a vector of
/// right-hand sides (one column per message element). Returns `None` when `a`
/// is singular.
pub fn solve(a: &[Vec<u32>], b: &[Vec<u32>], field: &FieldSpec) -> Option<Vec<Vec<u32>>> {
    let n = a.len();
    debug_assert!(a.iter().all(|row| row.len() == n));
    debug_assert_eq!(b.len(), n);
    let mut m: Vec<Vec<u32>> = a.to_vec();
    let mut rhs: Vec<Vec<u32>> = b.to_vec();
    for c in 0..n {
        let p = (c..n).find(|&i| m[i][c] != 0)?;
        m.swap(c, p);
        rhs.swap(c, p);
        let pinv = field.inv(m[c][c]).ok()?;
        for x in m[c].iter_mut() {
            *x = field.mul(*x, pinv);
        }
        for x in rhs[c].iter_mut() {
            *x = field.mul(*x, pinv);
        }
        for i in 0..n {
            if i != c && m[i][c] != 0 {
                let f = m[i][c];
                for j in 0..n {
                    let v = field.mul(f, m[c][j]);
                    m[i][j] ^= v;
                }
                for j in 0..rhs[i].len() {
                    let v = field.mul(f, rhs[c][j]);
                    rhs[i][j] ^= v;
                }
            }
        }
    }
    Some(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Schoolbook polynomial product followed by long division.
    fn naive_mul(a: u32, b: u32, poly: u32) -> u32 {
        let mut prod = 0u64;
        for i in 0..32 {
            if (b >> i) & 1 == 1 {
                prod ^= (a as u64) << i;
            }
        }
        let dp = 63 - (poly as u64).leading_zeros();
        for bit in (dp..64).rev() {
            if (prod >> bit) & 1 == 1 {
                prod ^= (poly as u64) << (bit - dp);
            }
        }
        prod as u32
    }

    #[test]
    fn default_polys_are_irreducible() {
        for t in 1..=MAX_WIDTH {
            let f = FieldSpec::new(t).unwrap();
            assert!(is_irreducible(f.poly()), "t={t}");
            assert_eq!(degree(f.poly()), Some(t));
        }
        assert!(!is_irreducible(0x5)); // x^2 + 1 = (x + 1)^2
        assert!(FieldSpec::with_poly(4, 0x15).is_err()); // x^4 + x^2 + 1
    }

    #[test]
    fn add_examples() {
        let a = FieldElement::new(0b1010, 4).unwrap();
        let b = FieldElement::new(0b0110, 4).unwrap();
        assert_eq!(add(a, b).unwrap().value(), 0b1100);
        assert_eq!(add(a, a).unwrap().value(), 0);
        assert_eq!(add(a, FieldElement::zero(4).unwrap()).unwrap(), a);
        let c = FieldElement::new(1, 3).unwrap();
        assert!(matches!(add(a, c), Err(Error::WidthMismatch(4, 3))));
    }

    #[test]
    fn mul_and_inv_examples() {
        let f = FieldSpec::new(4).unwrap();
        assert_eq!(f.poly(), 0x13);
        assert_eq!(naive_mul(0x2, 0x9, 0x13), 0x1);
        assert_eq!(f.mul(0x2, 0x9), 0x1);
        for a in 0..16 {
            assert_eq!(f.mul(a, 1), a);
            assert_eq!(f.mul(a, 0), 0);
        }
        assert_eq!(f.inv(1).unwrap(), 1);
        assert_eq!(f.inv(2).unwrap(), 0x9);
        assert!(matches!(f.inv(0), Err(Error::DivisionByZero(4))));

        let two = f.element(2).unwrap();
        assert_eq!(inv(two, &f).unwrap().value(), 9);
        assert_eq!(mul(two, f.element(9).unwrap(), &f).unwrap().value(), 1);
    }

    #[test]
    fn mul_matches_naive_exhaustively_small() {
        for t in 1..=6 {
            let f = FieldSpec::new(t).unwrap();
            for a in 0..f.order() as u32 {
                for b in 0..f.order() as u32 {
                    assert_eq!(f.mul(a, b), naive_mul(a, b, f.poly()));
                }
            }
        }
    }

    #[test]
    fn distributivity_exhaustive_t4() {
        for t in 1..=4 {
            let f = FieldSpec::new(t).unwrap();
            let q = f.order() as u32;
            for a in 0..q {
                for b in 0..q {
                    for c in 0..q {
                        assert_eq!(f.mul(a, b ^ c), f.mul(a, b) ^ f.mul(a, c));
                    }
                }
            }
        }
    }

    #[test]
    fn distributivity_randomized_up_to_t8() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for t in 5..=8 {
            let f = FieldSpec::new(t).unwrap();
            for _ in 0..10_000 {
                let a = rng.gen_range(0..f.order()) as u32;
                let b = rng.gen_range(0..f.order()) as u32;
                let c = rng.gen_range(0..f.order()) as u32;
                assert_eq!(f.mul(a, b ^ c), f.mul(a, b) ^ f.mul(a, c));
            }
        }
    }

    #[test]
    fn nonzero_elements_form_a_group() {
        for t in 1..=4 {
            let f = FieldSpec::new(t).unwrap();
            let q = f.order() as u32;
            for a in 1..q {
                for b in 1..q {
                    assert_ne!(f.mul(a, b), 0, "closure t={t}");
                }
                let ai = f.inv(a).unwrap();
                assert_eq!(f.mul(a, ai), 1);
                assert_eq!((1..q).filter(|&x| f.mul(a, x) == 1).count(), 1);
            }
        }
    }

    #[test]
    fn inverse_wide_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in 9..=16 {
            let f = FieldSpec::new(t).unwrap();
            for _ in 0..200 {
                let a = rng.gen_range(1..f.order()) as u32;
                assert_eq!(f.mul(a, f.inv(a).unwrap()), 1);
                assert_eq!(
                    f.mul(a, 0x3 & (f.order() as u32 - 1)),
                    naive_mul(a, 0x3 & (f.order() as u32 - 1), f.poly())
                );
            }
        }
    }

    #[test]
    fn serialization_width() {
        let e = FieldElement::new(0x1ab, 9).unwrap();
        assert_eq!(e.to_bytes(), vec![0x01, 0xab]);
        assert_eq!(FieldElement::from_bytes(&[0x01, 0xab], 9).unwrap(), e);
        assert!(FieldElement::from_bytes(&[0x03, 0xab], 9).is_err());
        assert_eq!(FieldElement::new(0xf, 4).unwrap().to_bytes(), vec![0x0f]);
    }

    #[test]
    fn solve_and_rank() {
        let f = FieldSpec::new(4).unwrap();
        let a = vec![vec![1, 2], vec![3, 4]];
        let x = vec![vec![5], vec![7]];
        let b: Vec<Vec<u32>> = a
            .iter()
            .map(|row| vec![f.mul(row[0], x[0][0]) ^ f.mul(row[1], x[1][0])])
            .collect();
        assert_eq!(solve(&a, &b, &f).unwrap(), x);
        assert_eq!(rank(&a, &f), 2);
        assert_eq!(rank(&[vec![1, 2], vec![2, f.mul(2, 2)]], &f), 1);
        assert!(solve(&[vec![1, 2], vec![2, f.mul(2, 2)]], &[vec![0], vec![0]], &f).is_none());
    }

    proptest! {
        #[test]
        fn add_round_trip(t in 1u32..=16, a in any::<u32>(), b in any::<u32>()) {
            let mask = (1u32 << t) - 1;
            let (a, b) = (FieldElement::new(a & mask, t).unwrap(), FieldElement::new(b & mask, t).unwrap());
            prop_assert_eq!(add(add(a, b).unwrap(), b).unwrap(), a);
            prop_assert_eq!(FieldElement::from_bytes(&a.to_bytes(), t).unwrap(), a);
        }
    }
}
