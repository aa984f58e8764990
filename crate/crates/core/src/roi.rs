//! Padded region-of-interest crops built from graphic-element detections.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use image::{ImageBuffer, Pixel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RoiError {
    #[error("no boxes given")]
    Empty,
    #[error("image dimensions must be positive, got {0}x{1}")]
    BadImage(u32, u32),
    #[error("detection {index} ({class}): {reason}")]
    BadDetection {
        index: usize,
        class: String,
        reason: String,
    },
    #[error("degenerate region {0}")]
    Degenerate(Rect),
    #[error("region {rect} lies outside the {width}x{height} image")]
    OutOfBounds { rect: Rect, width: u32, height: u32 },
    #[error("cannot read detections {path}: {message}")]
    Read { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiKind {
    Title,
    Legend,
    XAxis,
    YAxis,
}

impl RoiKind {
    pub const ALL: [RoiKind; 4] = [RoiKind::Title, RoiKind::Legend, RoiKind::XAxis, RoiKind::YAxis];

    pub fn as_str(self) -> &'static str {
        match self {
            RoiKind::Title => "title",
            RoiKind::Legend => "legend",
            RoiKind::XAxis => "x_axis",
            RoiKind::YAxis => "y_axis",
        }
    }

    /// Human-readable name used in prompts.
    pub fn display(self) -> &'static str {
        match self {
            RoiKind::Title => "title",
            RoiKind::Legend => "legend",
            RoiKind::XAxis => "x-axis",
            RoiKind::YAxis => "y-axis",
        }
    }
}

impl fmt::Display for RoiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned pixel rectangle, top-left origin. Coordinates may be negative
/// before clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub width: i64,
    pub height: i64,
}

impl Rect {
    pub const fn new(x: i64, y: i64, width: i64, height: i64) -> Self {
        Rect {
            x,
            y,
            width,
            height,
        }
    }

    pub fn right(&self) -> i64 {
        self.x + self.width
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.height
    }

    pub fn area(&self) -> i64 {
        self.width.max(0) * self.height.max(0)
    }

    pub fn is_empty(&self) -> bool {
        self.width <= 0 || self.height <= 0
    }

    pub fn from_edges(left: i64, top: i64, right: i64, bottom: i64) -> Self {
        Rect::new(left, top, right - left, bottom - top)
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let r = Rect::from_edges(
            self.x.max(other.x),
            self.y.max(other.y),
            self.right().min(other.right()),
            self.bottom().min(other.bottom()),
        );
        (!r.is_empty()).then_some(r)
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect::from_edges(
            self.x.min(other.x),
            self.y.min(other.y),
            self.right().max(other.right()),
            self.bottom().max(other.bottom()),
        )
    }

    pub fn contains(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x, self.y, self.width, self.height)
    }
}

/// One detector output box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "class")]
    pub klass: String,
    /// `[x, y, width, height]` in pixels.
    pub bbox: [f64; 4],
    pub score: f64,
}

impl Detection {
    pub fn new(klass: &str, bbox: [f64; 4], score: f64) -> Self {
        Detection {
            klass: klass.to_string(),
            bbox,
            score,
        }
    }

    /// Smallest integer rectangle covering the box.
    pub fn pixel_rect(&self) -> Rect {
        let [x, y, w, h] = self.bbox;
        Rect::from_edges(
            x.floor() as i64,
            y.floor() as i64,
            (x + w).ceil() as i64,
            (y + h).ceil() as i64,
        )
    }
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>, RoiError> {
    let read_err = |message: String| RoiError::Read {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))
}

/// Padding amounts per ROI kind. Fractions are of the union's own extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PaddingPolicy {
    pub legend_fraction: f64,
    pub legend_min: i64,
    pub axis_fraction: f64,
    pub axis_min: i64,
    pub axis_cross: i64,
    pub title: i64,
}

impl Default for PaddingPolicy {
    fn default() -> Self {
        PaddingPolicy {
            legend_fraction: 0.10,
            legend_min: 8,
            axis_fraction: 0.15,
            axis_min: 12,
            axis_cross: 8,
            title: 6,
        }
    }
}

/// Pixels added on each side before clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Padding {
    pub left: i64,
    pub right: i64,
    pub top: i64,
    pub bottom: i64,
}

impl Padding {
    fn uniform(p: i64) -> Self {
        Padding {
            left: p,
            right: p,
            top: p,
            bottom: p,
        }
    }

    fn axes(horizontal: i64, vertical: i64) -> Self {
        Padding {
            left: horizontal,
            right: horizontal,
            top: vertical,
            bottom: vertical,
        }
    }
}

impl PaddingPolicy {
    pub fn padding_for(&self, kind: RoiKind, union: &Rect) -> Padding {
        let scaled = |frac: f64, extent: i64, min: i64| ((frac * extent as f64).round() as i64).max(min);
        match kind {
            RoiKind::Legend => Padding::uniform(scaled(
                self.legend_fraction,
                union.width.max(union.height),
                self.legend_min,
            )),
            RoiKind::XAxis => Padding::axes(
                scaled(self.axis_fraction, union.width, self.axis_min),
                self.axis_cross,
            ),
            RoiKind::YAxis => Padding::axes(
                self.axis_cross,
                scaled(self.axis_fraction, union.height, self.axis_min),
            ),
            RoiKind::Title => Padding::uniform(self.title),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropRegion {
    pub kind: RoiKind,
    pub rect: Rect,
    pub source_boxes: Vec<Detection>,
    pub padding_applied: Padding,
}

/// Detector class name to ROI kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AliasTable(pub BTreeMap<String, RoiKind>);

impl Default for AliasTable {
    fn default() -> Self {
        let pairs: &[(&str, RoiKind)] = &[
            ("title", RoiKind::Title),
            ("chart_title", RoiKind::Title),
            ("legend", RoiKind::Legend),
            ("legend_label", RoiKind::Legend),
            ("legend_title", RoiKind::Legend),
            ("x_axis", RoiKind::XAxis),
            ("xaxis", RoiKind::XAxis),
            ("x_axis_label", RoiKind::XAxis),
            ("xlabel", RoiKind::XAxis),
            ("x_title", RoiKind::XAxis),
            ("y_axis", RoiKind::YAxis),
            ("yaxis", RoiKind::YAxis),
            ("y_axis_label", RoiKind::YAxis),
            ("ylabel", RoiKind::YAxis),
            ("y_title", RoiKind::YAxis),
        ];
        AliasTable(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }
}

impl AliasTable {
    /// Case-insensitive; `-` and spaces match `_` ("Y-Axis" finds "y_axis").
    pub fn kind_of(&self, class: &str) -> Option<RoiKind> {
        let key: String = class
            .trim()
            .chars()
            .map(|c| if c == '-' || c == ' ' { '_' } else { c.to_ascii_lowercase() })
            .collect();
        self.0.get(&key).copied()
    }
}

/// Spatial spread `(x_spread, y_spread)` of a set of boxes.
pub fn compute_spread(boxes: &[Detection]) -> Result<(f64, f64), RoiError> {
    if boxes.is_empty() {
        return Err(RoiError::Empty);
    }
    let mut left = f64::INFINITY;
    let mut top = f64::INFINITY;
    let mut right = f64::NEG_INFINITY;
    let mut bottom = f64::NEG_INFINITY;
    for d in boxes {
        let [x, y, w, h] = d.bbox;
        left = left.min(x);
        top = top.min(y);
        right = right.max(x + w);
        bottom = bottom.max(y + h);
    }
    Ok((right - left, bottom - top))
}

fn image_rect(dims: (u32, u32)) -> Rect {
    Rect::new(0, 0, dims.0 as i64, dims.1 as i64)
}

/// Pads `union` for `kind` and clamps it to the image.
pub fn pad_roi(
    union: Rect,
    kind: RoiKind,
    dims: (u32, u32),
    policy: &PaddingPolicy,
) -> Result<(Rect, Padding), RoiError> {
    if dims.0 == 0 || dims.1 == 0 {
        return Err(RoiError::BadImage(dims.0, dims.1));
    }
    if union.is_empty() {
        return Err(RoiError::Degenerate(union));
    }
    let bounds = image_rect(dims);
    if union.intersect(&bounds).is_none() {
        return Err(RoiError::OutOfBounds {
            rect: union,
            width: dims.0,
            height: dims.1,
        });
    }
    let pad = policy.padding_for(kind, &union);
    let padded = Rect::from_edges(
        union.x - pad.left,
        union.y - pad.top,
        union.right() + pad.right,
        union.bottom() + pad.bottom,
    );
    let clamped = padded.intersect(&bounds).expect("padded rect still meets image");
    Ok((clamped, pad))
}

fn validate_detection(index: usize, d: &Detection, bounds: &Rect) -> Result<(), RoiError> {
    let bad = |reason: &str| RoiError::BadDetection {
        index,
        class: d.klass.clone(),
        reason: reason.to_string(),
    };
    if d.bbox.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite bbox"));
    }
    if d.bbox[2] <= 0.0 || d.bbox[3] <= 0.0 {
        return Err(bad("width and height must be positive"));
    }
    if !(0.0..=1.0).contains(&d.score) {
        return Err(bad("score outside [0, 1]"));
    }
    if d.pixel_rect().intersect(bounds).is_none() {
        return Err(bad("bbox does not intersect the image"));
    }
    Ok(())
}

/// Builds one padded crop region per ROI kind that has at least one detection.
///
/// Detections whose class is not in the alias table are ignored. Kinds with
/// no detection are absent from the result.
pub fn extract_rois(
    detections: &[Detection],
    dims: (u32, u32),
    policy: &PaddingPolicy,
    aliases: &AliasTable,
) -> Result<BTreeMap<RoiKind, CropRegion>, RoiError> {
    if dims.0 == 0 || dims.1 == 0 {
        return Err(RoiError::BadImage(dims.0, dims.1));
    }
    let bounds = image_rect(dims);
    let mut grouped: BTreeMap<RoiKind, Vec<Detection>> = BTreeMap::new();
    for (i, d) in detections.iter().enumerate() {
        validate_detection(i, d, &bounds)?;
        if let Some(kind) = aliases.kind_of(&d.klass) {
            grouped.entry(kind).or_default().push(d.clone());
        }
    }
    let mut out = BTreeMap::new();
    for (kind, mut boxes) in grouped {
        boxes.sort_by(|a, b| {
            a.bbox
                .partial_cmp(&b.bbox)
                .expect("finite")
                .then_with(|| a.klass.cmp(&b.klass))
                .then_with(|| a.score.total_cmp(&b.score))
        });
        let union = boxes
            .iter()
            .map(|d| d.pixel_rect().intersect(&bounds).expect("validated"))
            .reduce(|a, b| a.union(&b))
            .expect("non-empty group");
        let (rect, padding_applied) = pad_roi(union, kind, dims, policy)?;
        out.insert(
            kind,
            CropRegion {
                kind,
                rect,
                source_boxes: boxes,
                padding_applied,
            },
        );
    }
    Ok(out)
}

/// Copies the pixels under `rect`; the rect must already be inside the image.
pub fn crop<P: Pixel + 'static>(
    image: &ImageBuffer<P, Vec<P::Subpixel>>,
    rect: &Rect,
) -> Result<ImageBuffer<P, Vec<P::Subpixel>>, RoiError> {
    let bounds = image_rect(image.dimensions());
    if rect.is_empty() || !bounds.contains(rect) {
        return Err(RoiError::OutOfBounds {
            rect: *rect,
            width: image.width(),
            height: image.height(),
        });
    }
    Ok(image::imageops::crop_imm(
        image,
        rect.x as u32,
        rect.y as u32,
        rect.width as u32,
        rect.height as u32,
    )
    .to_image())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};
    use proptest::prelude::*;

    fn det(class: &str, x: f64, y: f64, w: f64, h: f64) -> Detection {
        Detection::new(class, [x, y, w, h], 0.9)
    }

    #[test]
    fn spread_examples() {
        assert_eq!(compute_spread(&[det("a", 10.0, 10.0, 30.0, 20.0)]).unwrap(), (30.0, 20.0));
        let two = [det("a", 0.0, 0.0, 10.0, 10.0), det("a", 40.0, 5.0, 10.0, 10.0)];
        assert_eq!(compute_spread(&two).unwrap(), (50.0, 15.0));
        let same = [det("a", 3.0, 4.0, 5.0, 6.0), det("a", 3.0, 4.0, 5.0, 6.0)];
        assert_eq!(compute_spread(&same).unwrap(), (5.0, 6.0));
        assert!(matches!(compute_spread(&[]), Err(RoiError::Empty)));
    }

    #[test]
    fn y_axis_padding_clamps_left_and_top() {
        // vertical pad max(round(0.15 * 200), 12) = 30, horizontal 8
        let (rect, pad) = pad_roi(
            Rect::new(5, 20, 20, 200),
            RoiKind::YAxis,
            (800, 600),
            &PaddingPolicy::default(),
        )
        .unwrap();
        assert_eq!(pad, Padding { left: 8, right: 8, top: 30, bottom: 30 });
        // edges: left 5-8 -> 0, top 20-30 -> 0, right 25+8 = 33, bottom 220+30 = 250
        assert_eq!(rect, Rect::new(0, 0, 33, 250));
    }

    #[test]
    fn full_image_union_stays_full_image() {
        for kind in RoiKind::ALL {
            let (rect, _) =
                pad_roi(Rect::new(0, 0, 640, 480), kind, (640, 480), &PaddingPolicy::default())
                    .unwrap();
            assert_eq!(rect, Rect::new(0, 0, 640, 480));
        }
    }

    #[test]
    fn title_pads_six_and_clamps_top() {
        let (rect, _) = pad_roi(
            Rect::new(100, 0, 200, 30),
            RoiKind::Title,
            (800, 600),
            &PaddingPolicy::default(),
        )
        .unwrap();
        assert_eq!(rect, Rect::new(94, 0, 212, 36));
    }

    #[test]
    fn legend_and_x_axis_minimums() {
        let p = PaddingPolicy::default();
        // legend max(round(0.1*40), 8) = 8
        assert_eq!(p.padding_for(RoiKind::Legend, &Rect::new(0, 0, 40, 20)), Padding::uniform(8));
        // legend max(round(0.1*300), 8) = 30
        assert_eq!(p.padding_for(RoiKind::Legend, &Rect::new(0, 0, 300, 20)), Padding::uniform(30));
        // x-axis horizontal max(round(0.15*400), 12) = 60, vertical 8
        assert_eq!(p.padding_for(RoiKind::XAxis, &Rect::new(0, 0, 400, 20)), Padding::axes(60, 8));
    }

    #[test]
    fn degenerate_and_outside_unions_error() {
        let p = PaddingPolicy::default();
        assert!(matches!(
            pad_roi(Rect::new(10, 10, 0, 5), RoiKind::Title, (100, 100), &p),
            Err(RoiError::Degenerate(_))
        ));
        assert!(matches!(
            pad_roi(Rect::new(200, 10, 5, 5), RoiKind::Title, (100, 100), &p),
            Err(RoiError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn extract_full_and_partial_coverage() {
        let aliases = AliasTable::default();
        let p = PaddingPolicy::default();
        let all = [
            det("chart_title", 200.0, 5.0, 300.0, 30.0),
            det("legend", 600.0, 50.0, 100.0, 40.0),
            det("xlabel", 100.0, 550.0, 30.0, 15.0),
            det("ylabel", 10.0, 100.0, 30.0, 15.0),
            det("mark_label", 300.0, 300.0, 20.0, 10.0),
        ];
        assert_eq!(extract_rois(&all, (800, 600), &p, &aliases).unwrap().len(), 4);
        let only_legend = [det("legend", 600.0, 50.0, 100.0, 40.0)];
        let m = extract_rois(&only_legend, (800, 600), &p, &aliases).unwrap();
        assert_eq!(m.keys().copied().collect::<Vec<_>>(), [RoiKind::Legend]);
    }

    #[test]
    fn two_x_labels_union_then_pad() {
        let boxes = [det("xlabel", 100.0, 550.0, 30.0, 15.0), det("xlabel", 300.0, 552.0, 40.0, 15.0)];
        let m = extract_rois(&boxes, (800, 600), &PaddingPolicy::default(), &AliasTable::default())
            .unwrap();
        let r = &m[&RoiKind::XAxis];
        // union (100,550)-(340,567): width 240, height 17
        // horizontal pad max(round(36), 12) = 36, vertical 8
        assert_eq!(r.rect, Rect::from_edges(64, 542, 376, 575));
        assert_eq!(r.source_boxes.len(), 2);
    }

    #[test]
    fn invalid_detection_rejected() {
        let p = PaddingPolicy::default();
        let a = AliasTable::default();
        assert!(extract_rois(&[det("legend", 0.0, 0.0, 0.0, 4.0)], (10, 10), &p, &a).is_err());
        assert!(extract_rois(&[det("legend", 50.0, 50.0, 4.0, 4.0)], (10, 10), &p, &a).is_err());
    }

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 3) as u8, (y * 5) as u8, ((x + y) % 251) as u8]))
    }

    fn checksum(pixels: impl Iterator<Item = [u8; 3]>) -> u64 {
        pixels.enumerate().fold(0u64, |acc, (i, p)| {
            acc.wrapping_mul(31)
                .wrapping_add(i as u64 ^ ((p[0] as u64) << 16 | (p[1] as u64) << 8 | p[2] as u64))
        })
    }

    #[test]
    fn crop_matches_bruteforce_copy() {
        let img = gradient(80, 60);
        let rect = Rect::new(10, 10, 50, 40);
        let out = crop(&img, &rect).unwrap();
        assert_eq!(out.dimensions(), (50, 40));
        let mut expected = Vec::new();
        for y in 10..50 {
            for x in 10..60 {
                expected.push(img.get_pixel(x, y).0);
            }
        }
        assert_eq!(checksum(out.pixels().map(|p| p.0)), checksum(expected.into_iter()));
    }

    #[test]
    fn crop_identity_and_corner() {
        let img = gradient(20, 10);
        assert_eq!(crop(&img, &Rect::new(0, 0, 20, 10)).unwrap(), img);
        let one = crop(&img, &Rect::new(0, 0, 1, 1)).unwrap();
        assert_eq!(one.get_pixel(0, 0), img.get_pixel(0, 0));
        assert!(crop(&img, &Rect::new(15, 0, 10, 5)).is_err());
    }

    fn arb_det() -> impl Strategy<Value = Detection> {
        (
            prop::sample::select(vec!["title", "legend", "xlabel", "ylabel"]),
            0.0f64..190.0,
            0.0f64..140.0,
            1.0f64..60.0,
            1.0f64..40.0,
        )
            .prop_map(|(c, x, y, w, h)| det(c, x, y, w, h))
    }

    proptest! {
        #[test]
        fn regions_contain_sources_and_fit_image(dets in prop::collection::vec(arb_det(), 1..10)) {
            let dims = (200, 150);
            let m = extract_rois(&dets, dims, &PaddingPolicy::default(), &AliasTable::default()).unwrap();
            let bounds = image_rect(dims);
            for region in m.values() {
                prop_assert!(bounds.contains(&region.rect));
                for d in &region.source_boxes {
                    let clipped = d.pixel_rect().intersect(&bounds).unwrap();
                    prop_assert!(region.rect.contains(&clipped));
                }
            }
        }

        #[test]
        fn order_independent(dets in prop::collection::vec(arb_det(), 1..10)) {
            let p = PaddingPolicy::default();
            let a = AliasTable::default();
            let forward = extract_rois(&dets, (200, 150), &p, &a).unwrap();
            let mut rev = dets.clone();
            rev.reverse();
            prop_assert_eq!(forward, extract_rois(&rev, (200, 150), &p, &a).unwrap());
        }

        #[test]
        fn more_padding_never_shrinks(
            d in arb_det(),
            bump in 0i64..20,
            frac in 0.0f64..0.3,
        ) {
            let union = d.pixel_rect().intersect(&image_rect((200, 150))).unwrap();
            let base = PaddingPolicy::default();
            let bigger = PaddingPolicy {
                legend_fraction: base.legend_fraction + frac,
                legend_min: base.legend_min + bump,
                axis_fraction: base.axis_fraction + frac,
                axis_min: base.axis_min + bump,
                axis_cross: base.axis_cross + bump,
                title: base.title + bump,
            };
            for kind in RoiKind::ALL {
                let pa = base.padding_for(kind, &union);
                let pb = bigger.padding_for(kind, &union);
                prop_assert!(pb.left >= pa.left && pb.right >= pa.right);
                prop_assert!(pb.top >= pa.top && pb.bottom >= pa.bottom);
                let (ra, _) = pad_roi(union, kind, (200, 150), &base).unwrap();
                let (rb, _) = pad_roi(union, kind, (200, 150), &bigger).unwrap();
                prop_assert!(rb.contains(&ra));
                prop_assert!(rb.area() >= ra.area());
            }
        }
    }
}
