//! CIFAR-10 / CIFAR-100 binary batches.
//!
//! A CIFAR-10 record is one label byte then 3072 pixel bytes (1024 red, 1024
//! green, 1024 blue, each row-major 32x32). CIFAR-100 records carry a coarse
//! and a fine label byte; the fine label is the one used.

use crate::error::{Error, Result};

pub const SIDE: usize = 32;
pub const PIXELS: usize = 3 * SIDE * SIDE;

/// Raw decoded batch: labels and channel-planar pixel bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct CifarBatch {
    pub labels: Vec<u8>,
    pub pixels: Vec<u8>,
}

pub fn record_size(coarse: bool) -> usize {
    PIXELS + if coarse { 2 } else { 1 }
}

/// `coarse` selects the CIFAR-100 layout (two label bytes per record).
pub fn parse_cifar_batch(bytes: &[u8], coarse: bool) -> Result<CifarBatch> {
    let size = record_size(coarse);
    if bytes.is_empty() || !bytes.len().is_multiple_of(size) {
        return Err(Error::Parse {
            offset: bytes.len() - bytes.len() % size,
            message: format!("length {} is not a multiple of the {size}-byte record", bytes.len()),
        });
    }
    let n = bytes.len() / size;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    for rec in bytes.chunks_exact(size) {
        let label_bytes = size - PIXELS;
        labels.push(rec[label_bytes - 1]);
        pixels.extend_from_slice(&rec[label_bytes..]);
    }
    Ok(CifarBatch { labels, pixels })
}
