//! Fixed-width bit packing of level indices.
//!
//! Layout: each index occupies `ceil(log2 k)` bits, written most significant
//! bit first. Indices follow in vector order and the bit stream fills each
//! byte from its most significant bit down. The final byte is zero padded.
//! `g_min`, `g_max`, `k` and `d` are not part of the payload.

use super::{check_budget, QuantizedGradient, QuantizerError, Result};

/// Packed index stream plus its exact bit length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedIndices {
    pub bytes: Vec<u8>,
    pub bit_len: usize,
}

/// Field width `ceil(log2 k)` in bits.
pub fn field_width(k: u32) -> u32 {
    debug_assert!(k >= 2);
    32 - (k - 1).leading_zeros()
}

/// Wire size `d * ceil(log2 k)` in bits.
pub fn wire_bits(k: u32, d: usize) -> usize {
    d * field_width(k) as usize
}

pub fn encode_bits(q: &QuantizedGradient) -> PackedIndices {
    let width = field_width(q.k());
    let bit_len = q.dim() * width as usize;
    let mut bytes = vec![0u8; bit_len.div_ceil(8)];
    let mut pos = 0usize;
    for &r in q.indices() {
        for b in (0..width).rev() {
            if (r >> b) & 1 == 1 {
                bytes[pos / 8] |= 0x80 >> (pos % 8);
            }
            pos += 1;
        }
    }
    PackedIndices { bytes, bit_len }
}

pub fn decode_bits(
    bytes: &[u8],
    d: usize,
    k: u32,
    g_min: f64,
    g_max: f64,
) -> Result<QuantizedGradient> {
    check_budget(k as u64)?;
    let width = field_width(k);
    let expected = wire_bits(k, d).div_ceil(8);
    if bytes.len() != expected {
        return Err(QuantizerError::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let mut indices = Vec::with_capacity(d);
    let mut pos = 0usize;
    for _ in 0..d {
        let mut r = 0u32;
        for _ in 0..width {
            let bit = (bytes[pos / 8] >> (7 - pos % 8)) & 1;
            r = (r << 1) | bit as u32;
            pos += 1;
        }
        indices.push(r);
    }
    QuantizedGradient::new(g_min, g_max, k, indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_bit_layout() {
        let q = QuantizedGradient::new(0.0, 1.0, 2, vec![0, 1, 0, 1, 1, 0, 0, 1]).unwrap();
        let packed = encode_bits(&q);
        assert_eq!(packed.bytes, vec![0b0101_1001]);
        assert_eq!(packed.bit_len, 8);
    }

    #[test]
    fn ceiling_width() {
        assert_eq!(field_width(2), 1);
        assert_eq!(field_width(3), 2);
        assert_eq!(field_width(4), 2);
        assert_eq!(field_width(5), 3);
        assert_eq!(field_width(256), 8);
        assert_eq!(field_width(257), 9);
        let q = QuantizedGradient::new(0.0, 1.0, 3, vec![2, 0, 1, 2]).unwrap();
        let packed = encode_bits(&q);
        assert_eq!(packed.bit_len, 8);
        assert_eq!(packed.bytes, vec![0b1000_0110]);
    }

    #[test]
    fn multi_byte_padding_is_zero() {
        let q = QuantizedGradient::new(0.0, 1.0, 5, vec![4, 3, 1]).unwrap();
        let packed = encode_bits(&q);
        assert_eq!(packed.bit_len, 9);
        // 100 011 001 -> 1000_1100 1000_0000
        assert_eq!(packed.bytes, vec![0b1000_1100, 0b1000_0000]);
    }

    #[test]
    fn decode_rejects_truncation_and_bad_indices() {
        let q = QuantizedGradient::new(0.0, 1.0, 5, vec![4, 3, 1]).unwrap();
        let packed = encode_bits(&q);
        assert!(matches!(
            decode_bits(&packed.bytes[..1], 3, 5, 0.0, 1.0),
            Err(QuantizerError::LengthMismatch {
                expected: 2,
                actual: 1
            })
        ));
        // 111 in a 3-bit field is 7 >= k = 5
        assert!(matches!(
            decode_bits(&[0b1110_0000, 0], 3, 5, 0.0, 1.0),
            Err(QuantizerError::IndexOutOfRange { index: 7, k: 5 })
        ));
    }

    fn payload() -> impl Strategy<Value = QuantizedGradient> {
        (
            2u32..5000,
            1usize..200,
            -10.0f64..10.0,
            0.0f64..10.0,
            any::<u64>(),
        )
            .prop_map(|(k, d, lo, width, salt)| {
                let indices = (0..d)
                    .map(|i| ((salt.wrapping_mul(i as u64 + 1).rotate_left(17)) % k as u64) as u32)
                    .collect::<Vec<_>>();
                if width == 0.0 {
                    QuantizedGradient::new(lo, lo, k, vec![0; d]).unwrap()
                } else {
                    QuantizedGradient::new(lo, lo + width, k, indices).unwrap()
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn decode_inverts_encode(q in payload()) {
            let packed = encode_bits(&q);
            prop_assert_eq!(packed.bit_len, wire_bits(q.k(), q.dim()));
            let back = decode_bits(&packed.bytes, q.dim(), q.k(), q.g_min(), q.g_max()).unwrap();
            prop_assert_eq!(back, q);
        }
    }
}
