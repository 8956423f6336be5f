//! Image decoding, preprocessing and the train/test split.

mod bmp;
mod dataset;
pub mod synth;

pub use bmp::{decode_bitmap, decode_bitmap_named, encode_bitmap, RawImage, IMAGE_SIDE};
pub use dataset::{
    batches, collate, epoch_order, load_dataset, load_image, one_hot, Batch, Sample, SplitDataset,
    SplitRule, CLASSES,
};

use crate::tensor::{Scalar, Tensor};

/// ITU-R BT.601 luma, rounded to the nearest integer.
pub fn luma(rgb: [u8; 3]) -> u8 {
    let [r, g, b] = rgb.map(f64::from);
    (0.299 * r + 0.587 * g + 0.114 * b).round().clamp(0.0, 255.0) as u8
}

/// Grayscale → invert → scale to `[0, 1]`, giving a `1 × H × W` tensor with
/// light ink on a dark background.
pub fn preprocess<T: Scalar>(raw: &RawImage) -> Tensor<T> {
    let data = raw
        .pixels
        .iter()
        .map(|&p| T::from_f64_lossy(f64::from(255 - luma(p)) / 255.0))
        .collect();
    Tensor::from_vec(&[1, raw.height, raw.width], data).expect("pixel count matches dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(rgb: [u8; 3]) -> f64 {
        preprocess::<f64>(&RawImage::filled(1, 1, rgb)).data()[0]
    }

    #[test]
    fn white_background_becomes_zero() {
        assert_eq!(single([255, 255, 255]), 0.0);
    }

    #[test]
    fn black_ink_becomes_one() {
        assert_eq!(single([0, 0, 0]), 1.0);
    }

    #[test]
    fn luma_rounding_case() {
        assert_eq!(luma([76, 150, 29]), 114);
        assert!((single([76, 150, 29]) - 141.0 / 255.0).abs() < 1e-12);
        assert!((single([76, 150, 29]) - 0.552941).abs() < 1e-6);
    }

    #[test]
    fn output_shape() {
        let t = preprocess::<f32>(&RawImage::filled(32, 32, [10, 20, 30]));
        assert_eq!(t.dims(), &[1, 32, 32]);
    }
}
