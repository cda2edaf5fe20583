//! IDX files (the MNIST family): a big-endian magic word, big-endian `u32`
//! dimensions, then raw `u8` payload.

use crate::error::{Error, Result};

const LABEL_MAGIC: u32 = 0x0000_0801;
const IMAGE_MAGIC: u32 = 0x0000_0803;

/// Decoded image file: `count` images of `height x width`, one byte per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let chunk = self.take(4)?;
        Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Parse {
                offset: self.bytes.len(),
                message: format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            }),
        }
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let magic = self.u32()?;
        if magic != expected {
            return Err(Error::Parse {
                offset: 0,
                message: format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
            });
        }
        Ok(())
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32()? as usize;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let pixels = r.take(count * height * width)?.to_vec();
    Ok(IdxImages {
        count,
        height,
        width,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32()? as usize;
    Ok(r.take(count)?.to_vec())
}

/// Serialize images back to IDX. Handy for fixtures and subsets.
pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for word in [IMAGE_MAGIC, images.count as u32, images.height as u32, images.width as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn two_three_by_three_images() {
        let mut bytes = header(0x803, &[2, 3, 3]);
        bytes.extend(0..18u8);
        let img = parse_idx_images(&bytes).unwrap();
        assert_eq!((img.count, img.height, img.width), (2, 3, 3));
        assert_eq!(img.pixels[17], 17);
        assert_eq!(write_idx_images(&img), bytes);
    }

    #[test]
    fn truncated_payload_reports_end_offset() {
        let mut bytes = header(0x803, &[2, 3, 3]);
        bytes.extend(0..10u8);
        match parse_idx_images(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 26),
            other => panic!("{other:?}"),
        }
        match parse_idx_labels(&[0, 0, 8]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_magic() {
        let bytes = header(0x801, &[1]);
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Parse { offset: 0, .. })));
        let mut labels = header(0x801, &[2]);
        labels.extend([3, 9]);
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![3, 9]);
    }
}
