use serde::{Deserialize, Serialize};

use super::SceneError;

/// Axis-aligned box in pixels, top-left and bottom-right corners.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_tl: f64,
    pub y_tl: f64,
    pub x_br: f64,
    pub y_br: f64,
}

impl BBox {
    pub fn new(x_tl: f64, y_tl: f64, x_br: f64, y_br: f64) -> Result<Self, SceneError> {
        let b = BBox { x_tl, y_tl, x_br, y_br };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let finite = [self.x_tl, self.y_tl, self.x_br, self.y_br].iter().all(|v| v.is_finite());
        if !finite || !(self.x_tl < self.x_br) || !(self.y_tl < self.y_br) {
            return Err(SceneError::DegenerateBox(*self));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_br - self.x_tl
    }

    pub fn height(&self) -> f64 {
        self.y_br - self.y_tl
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_br.min(other.x_br) - self.x_tl.max(other.x_tl)).max(0.0);
        let h = (self.y_br.min(other.y_br) - self.y_tl.max(other.y_tl)).max(0.0);
        w * h
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x_tl <= other.x_tl && self.y_tl <= other.y_tl && self.x_br >= other.x_br && self.y_br >= other.y_br
    }

    pub fn scaled(&self, factor: f64) -> BBox {
        BBox {
            x_tl: self.x_tl * factor,
            y_tl: self.y_tl * factor,
            x_br: self.x_br * factor,
            y_br: self.y_br * factor,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_tl + self.x_br) / 2.0, (self.y_tl + self.y_br) / 2.0)
    }

    /// Horizontal overlap as a fraction of the narrower box.
    pub fn horizontal_overlap(&self, other: &BBox) -> f64 {
        let w = (self.x_br.min(other.x_br) - self.x_tl.max(other.x_tl)).max(0.0);
        w / self.width().min(other.width())
    }

    /// Vertical overlap as a fraction of the shorter box.
    pub fn vertical_overlap(&self, other: &BBox) -> f64 {
        let h = (self.y_br.min(other.y_br) - self.y_tl.max(other.y_tl)).max(0.0);
        h / self.height().min(other.height())
    }
}

/// `[x_tl/W, y_tl/H, x_br/W, y_br/H, w*h/(W*H)]`.
pub fn spatial_feature(b: &BBox, width: f64, height: f64) -> Result<[f64; 5], SceneError> {
    b.validate()?;
    if !(width > 0.0) || !(height > 0.0) {
        return Err(SceneError::ImageSize { width, height });
    }
    Ok([
        b.x_tl / width,
        b.y_tl / height,
        b.x_br / width,
        b.y_br / height,
        (b.width() * b.height()) / (width * height),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_feature_examples() {
        let (w, h) = (640.0, 480.0);
        let full = spatial_feature(&BBox::new(0.0, 0.0, w, h).unwrap(), w, h).unwrap();
        assert_eq!(full, [0.0, 0.0, 1.0, 1.0, 1.0]);
        let quarter = spatial_feature(&BBox::new(0.0, 0.0, w / 2.0, h / 2.0).unwrap(), w, h).unwrap();
        assert_eq!(quarter, [0.0, 0.0, 0.5, 0.5, 0.25]);
        let centre = BBox::new(w / 4.0, h / 4.0, 3.0 * w / 4.0, 3.0 * h / 4.0).unwrap();
        assert_eq!(spatial_feature(&centre, w, h).unwrap(), [0.25, 0.25, 0.75, 0.75, 0.25]);
    }

    proptest::proptest! {
        #[test]
        fn spatial_feature_is_scale_invariant(
            x in 0.0f64..500.0, y in 0.0f64..400.0, w in 1.0f64..100.0, h in 1.0f64..70.0, k in 0.1f64..10.0,
        ) {
            let b = BBox::new(x, y, x + w, y + h).unwrap();
            let f = spatial_feature(&b, 640.0, 480.0).unwrap();
            let g = spatial_feature(&b.scaled(k), 640.0 * k, 480.0 * k).unwrap();
            for (a, c) in f.iter().zip(g) {
                proptest::prop_assert!((a - c).abs() <= 1e-12 * a.abs().max(1.0));
            }
            proptest::prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(BBox::new(1.0, 1.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 3.0, 1.0, 2.0).is_err());
        let flat = BBox {
            x_tl: 0.0,
            y_tl: 0.0,
            x_br: 2.0,
            y_br: 0.0,
        };
        assert!(matches!(spatial_feature(&flat, 10.0, 10.0), Err(SceneError::DegenerateBox(_))));
        let ok = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(spatial_feature(&ok, 0.0, 10.0).is_err());
    }
}
