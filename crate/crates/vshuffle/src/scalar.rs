use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of a [`crate::tensor::VideoTensor`]: `f32` for normal
/// operation, `f64` for gradient-check mode.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Tag written into the VST1 header.
    const DTYPE: &'static str;
    /// Width in bytes of one element on disk.
    const BYTES: usize;

    fn write_le(self, buf: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Shorthand conversion from `f64` literals into the active scalar type.
#[inline]
pub fn sc<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("f64 conversion")
}
