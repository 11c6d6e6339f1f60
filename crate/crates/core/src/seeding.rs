//! Stable seed derivation for independent RNG streams.

use sha2::{Digest, Sha256};

/// One component of a seed path.
#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    Int(u64),
    Str(&'a str),
}

impl From<u64> for SeedPart<'_> {
    fn from(v: u64) -> Self {
        SeedPart::Int(v)
    }
}

impl From<usize> for SeedPart<'_> {
    fn from(v: usize) -> Self {
        SeedPart::Int(v as u64)
    }
}

impl<'a> From<&'a str> for SeedPart<'a> {
    fn from(v: &'a str) -> Self {
        SeedPart::Str(v)
    }
}

/// Hashes a sequence of labels into a 64-bit seed. The result does not
/// depend on the platform or the compiler version.
pub fn derive_seed(parts: &[SeedPart<'_>]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        match p {
            SeedPart::Int(v) => {
                h.update([0u8]);
                h.update(v.to_le_bytes());
            }
            SeedPart::Str(s) => {
                h.update([1u8]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
        }
    }
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

#[macro_export]
macro_rules! seed {
    ($($part:expr),* $(,)?) => {
        $crate::seeding::derive_seed(&[$($crate::seeding::SeedPart::from($part)),*])
    };
}
