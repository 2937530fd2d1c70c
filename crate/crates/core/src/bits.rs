//! Small helpers for bit strings stored as `Vec<bool>`.

/// Parse a string of `0`/`1` characters. Returns `None` on any other character.
pub fn parse(s: &str) -> Option<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect()
}

/// Render bits as a `0`/`1` string.
pub fn render(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Big-endian integer value of up to 64 bits.
pub fn to_u64(bits: &[bool]) -> u64 {
    assert!(bits.len() <= 64, "bit string longer than 64 bits");
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as u64)
}

/// The `width` low bits of `value`, most significant first.
pub fn from_u64(value: u64, width: usize) -> Vec<bool> {
    assert!(width <= 64, "width longer than 64 bits");
    (0..width).rev().map(|i| (value >> i) & 1 == 1).collect()
}

pub fn xor(a: &[bool], b: &[bool]) -> Vec<bool> {
    assert_eq!(a.len(), b.len(), "xor of unequal lengths");
    a.iter().zip(b).map(|(&x, &y)| x ^ y).collect()
}

pub fn parity(bits: &[bool]) -> bool {
    bits.iter().fold(false, |acc, &b| acc ^ b)
}

pub fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}
