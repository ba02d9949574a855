//! Offset-tracking byte readers shared by the binary file parsers. Every
//! failure reports the offset where the bytes ran out or went bad.

use crate::error::{Error, Result};

pub(crate) fn take<'a>(bytes: &'a [u8], off: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < *off + n {
        return Err(Error::parse(
            *off,
            format!("truncated file while reading {what} ({n} bytes needed)"),
        ));
    }
    let slice = &bytes[*off..*off + n];
    *off += n;
    Ok(slice)
}

pub(crate) fn read_u8(bytes: &[u8], off: &mut usize, what: &str) -> Result<u8> {
    Ok(take(bytes, off, 1, what)?[0])
}

pub(crate) fn read_u32_le(bytes: &[u8], off: &mut usize, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, off, 4, what)?.try_into().unwrap()))
}

pub(crate) fn read_u32_be(bytes: &[u8], off: &mut usize, what: &str) -> Result<u32> {
    Ok(u32::from_be_bytes(take(bytes, off, 4, what)?.try_into().unwrap()))
}

pub(crate) fn read_f64_le(bytes: &[u8], off: &mut usize, what: &str) -> Result<f64> {
    Ok(f64::from_le_bytes(take(bytes, off, 8, what)?.try_into().unwrap()))
}
