//! Bounding-box spatial features and the frozen class-embedding table.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of relative-scale components.
pub const RELATIVE_SCALE_LEN: usize = 5;
/// Number of relative-position components.
pub const RELATIVE_POSITION_LEN: usize = 6;
pub const SPATIAL_LEN: usize = RELATIVE_SCALE_LEN + RELATIVE_POSITION_LEN;
/// Identifies the component order of [`SpatialFeature::values`]; stored in
/// checkpoints.
pub const SPATIAL_ORDER_TAG: &str = "rs5:x1/W,y1/H,x2/W,y2/H,A/AI;rp6:dx1,dy1,lnw,lnh,dxc/W,dyc/H";
/// Boxes may overshoot the image by at most this many pixels before load
/// rejects them; smaller overshoot is clamped.
pub const CLAMP_TOLERANCE: f64 = 0.5;
pub const DEFAULT_EMBEDDING_DIM: usize = 300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("degenerate box [{x1}, {y1}, {x2}, {y2}]: zero or negative extent")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("box [{x1}, {y1}, {x2}, {y2}] lies outside the {width}x{height} image")]
    OutsideImage {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        width: f64,
        height: f64,
    },
    #[error("invalid image size {width}x{height}")]
    InvalidImage { width: f64, height: f64 },
    #[error("no embedding for token `{0}`")]
    MissingEmbedding(String),
    #[error("embedding table line {line}: {message}")]
    EmbeddingParse { line: usize, message: String },
    #[error("embedding table io: {0}")]
    Io(String),
}

/// Corner-coordinate box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl BoundingBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let finite = self.to_array().iter().all(|v| v.is_finite());
        if !finite || self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(FeatureError::DegenerateBox {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
            });
        }
        Ok(())
    }

    /// Clamps overshoot of up to [`CLAMP_TOLERANCE`] pixels onto the image
    /// border; anything further out is an error.
    pub fn clamped_to(&self, img: &ImageMeta) -> Result<Self, FeatureError> {
        self.validate()?;
        let tol = CLAMP_TOLERANCE;
        if self.x1 < -tol || self.y1 < -tol || self.x2 > img.width + tol || self.y2 > img.height + tol
        {
            return Err(self.outside(img));
        }
        let clamped = Self {
            x1: self.x1.max(0.0),
            y1: self.y1.max(0.0),
            x2: self.x2.min(img.width),
            y2: self.y2.min(img.height),
        };
        clamped.validate()?;
        Ok(clamped)
    }

    pub fn is_within(&self, img: &ImageMeta) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= img.width && self.y2 <= img.height
    }

    fn outside(&self, img: &ImageMeta) -> FeatureError {
        FeatureError::OutsideImage {
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
            width: img.width,
            height: img.height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMeta {
    pub width: f64,
    pub height: f64,
}

impl ImageMeta {
    pub fn new(width: f64, height: f64) -> Result<Self, FeatureError> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(FeatureError::InvalidImage { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

/// Directed spatial descriptor of box `a` relative to box `b`: the five
/// relative-scale components of `a` followed by the six relative-position
/// components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialFeature {
    pub values: [f64; SPATIAL_LEN],
}

impl SpatialFeature {
    pub fn relative_scale(&self) -> &[f64] {
        &self.values[..RELATIVE_SCALE_LEN]
    }

    pub fn relative_position(&self) -> &[f64] {
        &self.values[RELATIVE_SCALE_LEN..]
    }
}

/// `[x1/W, y1/H, x2/W, y2/H, A/A_img]`.
pub fn relative_scale(
    b: &BoundingBox,
    img: &ImageMeta,
) -> Result<[f64; RELATIVE_SCALE_LEN], FeatureError> {
    b.validate()?;
    Ok([
        b.x1 / img.width,
        b.y1 / img.height,
        b.x2 / img.width,
        b.y2 / img.height,
        b.area() / img.area(),
    ])
}

/// Position of `a` expressed in the frame of `b` (natural logarithms).
pub fn relative_position(
    a: &BoundingBox,
    b: &BoundingBox,
    img: &ImageMeta,
) -> Result<[f64; RELATIVE_POSITION_LEN], FeatureError> {
    a.validate()?;
    b.validate()?;
    let (bw, bh) = (b.width(), b.height());
    let (acx, acy) = a.center();
    let (bcx, bcy) = b.center();
    Ok([
        (a.x1 - b.x1) / bw,
        (a.y1 - b.y1) / bh,
        (a.width() / bw).ln(),
        (a.height() / bh).ln(),
        (acx - bcx) / img.width,
        (acy - bcy) / img.height,
    ])
}

pub fn spatial_features(
    a: &BoundingBox,
    b: &BoundingBox,
    img: &ImageMeta,
) -> Result<SpatialFeature, FeatureError> {
    let rs = relative_scale(a, img)?;
    let rp = relative_position(a, b, img)?;
    let mut values = [0.0; SPATIAL_LEN];
    values[..RELATIVE_SCALE_LEN].copy_from_slice(&rs);
    values[RELATIVE_SCALE_LEN..].copy_from_slice(&rp);
    Ok(SpatialFeature { values })
}

/// Read-only token → vector table. Rows are never modified once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    dim: usize,
    matrix: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self, FeatureError> {
        let mut table = Self {
            index: HashMap::with_capacity(rows.len()),
            tokens: Vec::with_capacity(rows.len()),
            dim,
            matrix: Vec::with_capacity(rows.len() * dim),
        };
        for (line, (token, vec)) in rows.into_iter().enumerate() {
            table.insert(line + 2, token, vec)?;
        }
        Ok(table)
    }

    fn insert(&mut self, line: usize, token: String, vec: Vec<f64>) -> Result<(), FeatureError> {
        let err = |message: String| FeatureError::EmbeddingParse { line, message };
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(err(format!("invalid token `{token}`")));
        }
        if vec.len() != self.dim {
            return Err(err(format!(
                "token `{token}` has {} components, expected {}",
                vec.len(),
                self.dim
            )));
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(err(format!("token `{token}` has a non-finite component")));
        }
        if self.index.contains_key(&token) {
            return Err(err(format!("duplicate token `{token}`")));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.matrix.extend(vec);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn lookup(&self, token: &str) -> Result<&[f64], FeatureError> {
        let row = *self
            .index
            .get(token)
            .ok_or_else(|| FeatureError::MissingEmbedding(token.to_string()))?;
        Ok(&self.matrix[row * self.dim..(row + 1) * self.dim])
    }

    /// Parses the `V D` header followed by `token v1 … vD` lines.
    pub fn read<R: Read>(reader: R) -> Result<Self, FeatureError> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| FeatureError::EmbeddingParse {
                line: 1,
                message: "missing `V D` header".into(),
            })?
            .map_err(|e| FeatureError::Io(e.to_string()))?;
        let parse_err = |line: usize, message: String| FeatureError::EmbeddingParse { line, message };
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (count, dim) = match fields.as_slice() {
            [v, d] => (
                v.parse::<usize>()
                    .map_err(|e| parse_err(1, format!("vocabulary size: {e}")))?,
                d.parse::<usize>()
                    .map_err(|e| parse_err(1, format!("dimension: {e}")))?,
            ),
            _ => return Err(parse_err(1, format!("expected `V D`, got `{header}`"))),
        };
        if dim == 0 {
            return Err(parse_err(1, "dimension must be positive".into()));
        }
        let mut table = Self {
            index: HashMap::with_capacity(count),
            tokens: Vec::with_capacity(count),
            dim,
            matrix: Vec::with_capacity(count * dim),
        };
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| FeatureError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap_or_default().to_string();
            let vec = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| parse_err(line_no, format!("token `{token}`: {e}")))?;
            if table.len() == count {
                return Err(parse_err(line_no, format!("more than the declared {count} rows")));
            }
            table.insert(line_no, token, vec)?;
        }
        if table.len() != count {
            return Err(parse_err(
                table.len() + 2,
                format!("declared {count} rows, found {}", table.len()),
            ));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let file = std::fs::File::open(path)
            .map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))?;
        Self::read(file)
    }

    /// Serializes with shortest round-trip float formatting.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (i, tok) in self.tokens.iter().enumerate() {
            out.push_str(tok);
            for v in &self.matrix[i * self.dim..(i + 1) * self.dim] {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < TOL)
    }

    #[test]
    fn relative_scale_examples() {
        let img = ImageMeta::new(200.0, 100.0).unwrap();
        let full = BoundingBox::new(0.0, 0.0, 200.0, 100.0);
        assert_eq!(relative_scale(&full, &img).unwrap(), [0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = BoundingBox::new(10.0, 20.0, 60.0, 70.0);
        // 50*50 / 20000 = 0.125
        assert!(close(&relative_scale(&b, &img).unwrap(), &[0.05, 0.2, 0.3, 0.7, 0.125]));
        let degenerate = BoundingBox::new(5.0, 5.0, 5.0, 10.0);
        assert!(matches!(
            relative_scale(&degenerate, &img),
            Err(FeatureError::DegenerateBox { .. })
        ));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn relative_position_examples() {
        let img = ImageMeta::new(100.0, 50.0).unwrap();
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BoundingBox::new(10.0, 0.0, 30.0, 20.0);
        assert_eq!(relative_position(&a, &a, &img).unwrap(), [0.0; 6]);
        // (0-10)/20, 0/20, ln(10/20), ln(10/20), (5-20)/100, (5-10)/50
        let half = 0.5f64.ln();
        assert!(close(
            &relative_position(&a, &b, &img).unwrap(),
            &[-0.5, 0.0, half, half, -0.15, -0.1]
        ));
        assert!((half + 0.693147).abs() < 1e-6);
        let flat = BoundingBox::new(10.0, 0.0, 10.0, 20.0);
        assert!(relative_position(&a, &flat, &img).is_err());
    }

    #[test]
    fn spatial_feature_composition() {
        let img = ImageMeta::new(100.0, 50.0).unwrap();
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BoundingBox::new(10.0, 0.0, 30.0, 20.0);
        let s = spatial_features(&a, &b, &img).unwrap();
        let mut expected = relative_scale(&a, &img).unwrap().to_vec();
        expected.extend(relative_position(&a, &b, &img).unwrap());
        assert_eq!(s.values.to_vec(), expected);
        assert!(close(s.relative_scale(), &[0.0, 0.0, 0.1, 0.2, 0.02]));
        let t = spatial_features(&b, &a, &img).unwrap();
        assert_ne!(s.values, t.values);

        let full = BoundingBox::new(0.0, 0.0, 100.0, 50.0);
        let f = spatial_features(&full, &full, &img).unwrap();
        assert_eq!(f.values, [0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn clamping_rules() {
        let img = ImageMeta::new(100.0, 50.0).unwrap();
        let touching = BoundingBox::new(0.0, 0.0, 100.0, 50.0);
        assert_eq!(touching.clamped_to(&img).unwrap(), touching);
        let noisy = BoundingBox::new(-0.4, 1.0, 100.5, 50.2);
        assert_eq!(noisy.clamped_to(&img).unwrap(), BoundingBox::new(0.0, 1.0, 100.0, 50.0));
        let far = BoundingBox::new(-0.6, 1.0, 20.0, 20.0);
        assert!(matches!(far.clamped_to(&img), Err(FeatureError::OutsideImage { .. })));
        assert!(ImageMeta::new(0.0, 5.0).is_err());
    }

    #[test]
    fn embedding_table_lookup() {
        let text = "3 2\nperson 0.5 -1\ncup 1e-3 2\nknife 0 0\n";
        let t = EmbeddingTable::read(text.as_bytes()).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.lookup("cup").unwrap(), &[1e-3, 2.0]);
        let first = t.lookup("person").unwrap().to_vec();
        let second = t.lookup("person").unwrap().to_vec();
        assert_eq!(
            first.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            second.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(
            t.lookup("fork").unwrap_err(),
            FeatureError::MissingEmbedding("fork".into())
        );
        assert!(t.lookup("fork").unwrap_err().to_string().contains("fork"));
        let reread = EmbeddingTable::read(t.to_text().as_bytes()).unwrap();
        assert_eq!(reread, t);
    }

    #[test]
    fn embedding_table_parse_errors() {
        for bad in [
            "",
            "2\n",
            "1 2\ncup 1\n",
            "2 2\ncup 1 2\n",
            "1 2\ncup 1 x\n",
            "2 1\ncup 1\ncup 2\n",
            "1 1\ncup 1\nfork 2\n",
        ] {
            assert!(EmbeddingTable::read(bad.as_bytes()).is_err(), "{bad:?}");
        }
        let err = EmbeddingTable::read("2 2\ncup 1 2\nfork 1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, FeatureError::EmbeddingParse { line: 3, .. }));
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0f64..150.0, 0.0f64..80.0, 1.0f64..50.0, 1.0f64..20.0)
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn self_relative_position_is_zero(b in arb_box()) {
            let img = ImageMeta::new(200.0, 100.0).unwrap();
            prop_assert_eq!(relative_position(&b, &b, &img).unwrap(), [0.0; 6]);
        }

        #[test]
        fn relative_scale_translation_covariance(b in arb_box(), shift in -10.0f64..10.0) {
            let img = ImageMeta::new(200.0, 100.0).unwrap();
            let moved = BoundingBox::new(b.x1 + shift, b.y1, b.x2 + shift, b.y2);
            let r0 = relative_scale(&b, &img).unwrap();
            let r1 = relative_scale(&moved, &img).unwrap();
            prop_assert!((r1[0] - r0[0] - shift / img.width).abs() < 1e-12);
            prop_assert!((r1[2] - r0[2] - shift / img.width).abs() < 1e-12);
            prop_assert_eq!(r1[1], r0[1]);
            prop_assert_eq!(r1[3], r0[3]);
            prop_assert!((r1[4] - r0[4]).abs() < 1e-15);
        }

        #[test]
        fn spatial_features_are_finite_and_deterministic(a in arb_box(), b in arb_box()) {
            let img = ImageMeta::new(200.0, 100.0).unwrap();
            let s = spatial_features(&a, &b, &img).unwrap();
            prop_assert!(s.values.iter().all(|v| v.is_finite()));
            prop_assert_eq!(s, spatial_features(&a, &b, &img).unwrap());
        }
    }
}
