//! Scalar abstraction so the numeric core runs in either f32 or f64.
//!
//! Training defaults to f32; gradient-check suites run in f64 where
//! central finite differences have enough headroom.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Debug + Display + Default + Send + Sync + 'static
{
    /// Dtype tag written into binary artifacts (checkpoints, embedding files).
    const DTYPE: u8;
    const DTYPE_NAME: &'static str;

    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 conversion")
    }
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("f64 conversion")
    }
    fn write_le(self, buf: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    const BYTE_LEN: usize;
}

impl Scalar for f32 {
    const DTYPE: u8 = 1;
    const DTYPE_NAME: &'static str = "f32";
    const BYTE_LEN: usize = 4;
    fn write_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: u8 = 2;
    const DTYPE_NAME: &'static str = "f64";
    const BYTE_LEN: usize = 8;
    fn write_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}
