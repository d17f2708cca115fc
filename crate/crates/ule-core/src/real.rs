//! Element type abstraction.  Everything numeric is generic over [`Real`] so
//! that oracle tests run in f64 while training defaults to f32, without a
//! cargo feature deciding the width for the whole workspace.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point element of tensors and parameters.
///
/// `from_f64`/`to_f64` are total casts; bookkeeping (RNG draws, running
/// statistics) happens in f64 and is cast at the edge so that the sequence of
/// sampled values does not depend on the element width.
pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Size of one element in bytes; doubles as the checkpoint dtype tag.
    const BYTES: u8;
    /// Short name used in configs and error messages ("f32" / "f64").
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one element from exactly `BYTES` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const BYTES: u8 = 4;
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("f32 needs 4 bytes"))
    }
}

impl Real for f64 {
    const BYTES: u8 = 8;
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("f64 needs 8 bytes"))
    }
}
