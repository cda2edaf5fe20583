//! Class activation maps: the final feature maps weighted by one row of
//! the classifier, min-max scaled to `[0, 1]`.

use std::io::Write;
use std::path::Path;

use super::network::Model;
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Scale to `[0, 1]`; a constant map becomes all zeros.
pub fn min_max_normalize(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    for v in values {
        *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
    }
}

/// `sum_c weights[c] * features[c]` over `[C, H, W]` features, normalized.
pub fn cam_from_features(features: &[f64], height: usize, width: usize, weights: &[f64]) -> Result<Tensor<f64>> {
    let plane = height * width;
    if plane == 0 || features.len() != weights.len() * plane {
        return Err(Error::shape(format!(
            "cam: {} feature values for {} channels of {height}x{width}",
            features.len(),
            weights.len()
        )));
    }
    let mut map = vec![0.0; plane];
    for (ch, &wc) in features.chunks(plane).zip(weights) {
        for (m, &f) in map.iter_mut().zip(ch) {
            *m += wc * f;
        }
    }
    min_max_normalize(&mut map);
    Tensor::from_vec(vec![height, width], map)
}

/// CAM of `class_index` for one `[1, C, H, W]` image.
pub fn cam<T: Scalar>(model: &Model<T>, image: &Tensor<T>, class_index: usize) -> Result<Tensor<f64>> {
    let cfg = model.config();
    if cfg.pool_output.area() != 1 {
        return Err(Error::invalid("cam needs a global-pool head (pool_output 1x1)"));
    }
    if class_index >= cfg.class_count {
        return Err(Error::invalid(format!("class {class_index} outside [0, {})", cfg.class_count)));
    }
    if image.shape().first() != Some(&1) {
        return Err(Error::shape(format!("cam takes a single image, got {:?}", image.shape())));
    }
    let mut tape = Tape::new();
    let vars = model.forward_eval_frozen(&mut tape, image.clone())?;
    let feats = tape.value(vars.features);
    let (_, c, h, w) = feats.dims4()?;
    let fc = model.param("fc.weight").expect("every model has a classifier");
    let row: Vec<f64> = fc.value.data()[class_index * c..(class_index + 1) * c].iter().map(|v| v.as_f64()).collect();
    let f: Vec<f64> = feats.data().iter().map(|v| v.as_f64()).collect();
    cam_from_features(&f, h, w, &row)
}

/// Binary 8-bit greyscale PGM (`P5`).
pub fn write_pgm(path: &Path, map: &Tensor<f64>) -> Result<()> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, out)?;
    Ok(())
}

/// One line per row, full precision.
pub fn write_csv(path: &Path, map: &Tensor<f64>) -> Result<()> {
    let w = map.shape()[1];
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in map.data().chunks(w) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_maps_normalize_to_zero() {
        let m = cam_from_features(&[2.0; 8], 2, 2, &[0.5, 1.5]).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_is_its_own_normalization() {
        let f = [0.0, 0.0, 0.0, 0.0, 1.0, 3.0, 2.0, 5.0];
        let m = cam_from_features(&f, 2, 2, &[0.0, 1.0]).unwrap();
        assert_eq!(m.data(), &[0.0, 0.5, 0.25, 1.0]);
    }

    #[test]
    fn two_channel_hand_case() {
        // 2*[1,2;3,4] - [4,3;2,1] = [-2,1;4,7] -> (x+2)/9
        let f = [1.0, 2.0, 3.0, 4.0, 4.0, 3.0, 2.0, 1.0];
        let m = cam_from_features(&f, 2, 2, &[2.0, -1.0]).unwrap();
        let want = [0.0, 3.0 / 9.0, 6.0 / 9.0, 1.0];
        for (a, b) in m.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn pgm_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let map = Tensor::from_vec(vec![2, 3], vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        write_pgm(&p, &map).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 6);
        assert_eq!(*bytes.last().unwrap(), 255);
    }
}
