//! Shared domain types: image chips and batches.

use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Real;

/// Which side of the domain shift a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Option<Domain> {
        match s {
            "source" => Some(Domain::Source),
            "target" => Some(Domain::Target),
            _ => None,
        }
    }
}

/// One image chip: pixels in channel-first layout (C, H, W), values in
/// [-1, 1], with domain tag and optional label / capture distance.
#[derive(Debug, Clone)]
pub struct ImageChip {
    pub pixels: Array3<f32>,
    pub domain: Domain,
    pub label: Option<usize>,
    pub capture_distance_m: Option<f64>,
}

impl ImageChip {
    pub fn new(
        pixels: Array3<f32>,
        domain: Domain,
        label: Option<usize>,
        capture_distance_m: Option<f64>,
    ) -> Result<Self> {
        let chip = ImageChip {
            pixels,
            domain,
            label,
            capture_distance_m,
        };
        chip.check_pixels()?;
        if let Some(d) = chip.capture_distance_m {
            if !(d > 0.0) {
                return Err(Error::NonpositiveDistance { value: d });
            }
        }
        Ok(chip)
    }

    /// Pixel-range invariant: every value in [-1, 1].
    pub fn check_pixels(&self) -> Result<()> {
        for &v in self.pixels.iter() {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::InvalidValue {
                    key: "pixels".into(),
                    reason: format!("value {v} outside [-1, 1]"),
                });
            }
        }
        Ok(())
    }

    pub fn check_label(&self, num_classes: usize) -> Result<()> {
        if let Some(l) = self.label {
            if l >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    num_classes,
                });
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

/// A batch of chips: the unit of all model and loss computation.
/// Images are (B, C, H, W); labels, when present, have length B.
#[derive(Debug, Clone)]
pub struct TensorBatch<F: Real> {
    pub images: Array4<F>,
    pub labels: Option<Vec<usize>>,
    pub domain: Domain,
}

impl<F: Real> TensorBatch<F> {
    pub fn new(images: Array4<F>, labels: Option<Vec<usize>>, domain: Domain) -> Result<Self> {
        let b = images.shape()[0];
        if b == 0 {
            return Err(Error::DataEmpty {
                what: "batch of size 0".into(),
            });
        }
        if let Some(ref l) = labels {
            if l.len() != b {
                return Err(Error::ShapeMismatch {
                    expected: format!("{b} labels"),
                    got: format!("{}", l.len()),
                });
            }
        }
        Ok(TensorBatch {
            images,
            labels,
            domain,
        })
    }

    /// Stack chips into a batch. All chips must share one shape.
    pub fn from_chips(chips: &[&ImageChip], with_labels: bool, domain: Domain) -> Result<Self> {
        if chips.is_empty() {
            return Err(Error::DataEmpty {
                what: "empty chip list".into(),
            });
        }
        let (c, h, w) = {
            let s = chips[0].pixels.shape();
            (s[0], s[1], s[2])
        };
        let mut images = Array4::<F>::zeros((chips.len(), c, h, w));
        for (i, chip) in chips.iter().enumerate() {
            if chip.pixels.shape() != [c, h, w] {
                return Err(Error::ShapeMismatch {
                    expected: format!("{c}x{h}x{w}"),
                    got: format!("{:?}", chip.pixels.shape()),
                });
            }
            images
                .index_axis_mut(Axis(0), i)
                .zip_mut_with(&chip.pixels, |dst, &src| *dst = F::from_f64c(src as f64));
        }
        let labels = if with_labels {
            let mut ls = Vec::with_capacity(chips.len());
            for chip in chips {
                match chip.label {
                    Some(l) => ls.push(l),
                    None => {
                        return Err(Error::DataEmpty {
                            what: "label requested on unlabeled chip".into(),
                        })
                    }
                }
            }
            Some(ls)
        } else {
            None
        };
        TensorBatch::new(images, labels, domain)
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same images, labels dropped. Used on the target side of the
    /// transductive phase so labels cannot reach any gradient path.
    pub fn without_labels(&self) -> TensorBatch<F> {
        TensorBatch {
            images: self.images.clone(),
            labels: None,
            domain: self.domain,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn pixel_range_enforced() {
        let mut px = Array3::<f32>::zeros((3, 4, 4));
        px[[0, 0, 0]] = 1.5;
        let err = ImageChip::new(px, Domain::Source, None, None).unwrap_err();
        assert_eq!(err.code(), "INVALID_VALUE");
    }

    #[test]
    fn nonpositive_distance_rejected() {
        let px = Array3::<f32>::zeros((3, 4, 4));
        let err = ImageChip::new(px, Domain::Source, None, Some(0.0)).unwrap_err();
        assert_eq!(err.code(), "NONPOSITIVE_DISTANCE");
    }

    #[test]
    fn label_range_checked() {
        let px = Array3::<f32>::zeros((3, 4, 4));
        let chip = ImageChip::new(px, Domain::Source, Some(10), None).unwrap();
        assert_eq!(chip.check_label(10).unwrap_err().code(), "LABEL_OUT_OF_RANGE");
        chip.check_label(11).unwrap();
    }

    #[test]
    fn batch_label_length_must_match() {
        let images = Array4::<f32>::zeros((2, 3, 4, 4));
        let err = TensorBatch::new(images, Some(vec![0]), Domain::Source).unwrap_err();
        assert_eq!(err.code(), "SHAPE_MISMATCH");
    }
}
