//! Per-keyframe object summaries rendered from raw detections: object
//! locations, per-category counts and pairwise relative positions.
//!
//! Image coordinates are y-down. Node ids restart at 1 on every frame and
//! follow detection input order.

use serde::{Deserialize, Serialize};

use crate::ports::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneGraphConfig {
    /// Boxes with IoU above this are "overlapping with" each other.
    pub overlap_iou: f64,
    /// Half-width in degrees of the horizontal and vertical direction bands.
    pub axis_band_deg: f64,
}

impl Default for SceneGraphConfig {
    fn default() -> Self {
        Self { overlap_iou: 0.5, axis_band_deg: 22.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    UpperLeftOf,
    UpperRightOf,
    LowerLeftOf,
    LowerRightOf,
    Overlapping,
}

impl Relation {
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "to the left of",
            Relation::RightOf => "to the right of",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::UpperLeftOf => "to the upper-left of",
            Relation::UpperRightOf => "to the upper-right of",
            Relation::LowerLeftOf => "to the lower-left of",
            Relation::LowerRightOf => "to the lower-right of",
            Relation::Overlapping => "overlapping with",
        }
    }

    /// The relation of `b` to `a` given the relation of `a` to `b`.
    pub fn inverse(self) -> Relation {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
            Relation::UpperLeftOf => Relation::LowerRightOf,
            Relation::LowerRightOf => Relation::UpperLeftOf,
            Relation::UpperRightOf => Relation::LowerLeftOf,
            Relation::LowerLeftOf => Relation::UpperRightOf,
            Relation::Overlapping => Relation::Overlapping,
        }
    }
}

/// Where `a` sits relative to `b`.
pub fn relation(a: &Detection, b: &Detection, cfg: &SceneGraphConfig) -> Relation {
    if a.bbox.iou(&b.bbox) > cfg.overlap_iou {
        return Relation::Overlapping;
    }
    let (ax, ay) = a.bbox.center();
    let (bx, by) = b.bbox.center();
    let (dx, dy) = (bx - ax, by - ay);
    if dx == 0.0 && dy == 0.0 {
        return Relation::Overlapping;
    }
    // Decided on |dx|, |dy| and the signs only, so swapping a and b yields
    // exactly the inverse relation.
    let band = cfg.axis_band_deg.to_radians().tan();
    let (adx, ady) = (dx.abs(), dy.abs());
    if ady <= adx * band {
        if dx > 0.0 { Relation::LeftOf } else { Relation::RightOf }
    } else if adx <= ady * band {
        if dy > 0.0 { Relation::Above } else { Relation::Below }
    } else {
        match (dx > 0.0, dy > 0.0) {
            (true, true) => Relation::UpperLeftOf,
            (true, false) => Relation::LowerLeftOf,
            (false, true) => Relation::UpperRightOf,
            (false, false) => Relation::LowerRightOf,
        }
    }
}

pub fn positional_description(a: &Detection, b: &Detection, cfg: &SceneGraphConfig) -> &'static str {
    relation(a, b, cfg).phrase()
}

/// Integers print without a fractional part; anything else with up to two
/// decimals.
pub fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraphSummary {
    pub frame_index: u64,
    pub timestamp_s: f64,
    pub loc_texts: Vec<String>,
    pub cnt_text: String,
    pub rel_texts: Vec<String>,
    /// Node id of each input detection, in input order.
    pub node_ids: Vec<u32>,
}

impl SceneGraphSummary {
    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// Category totals in first-appearance order, parsed back from
    /// `cnt_text`.
    pub fn counts(&self) -> Vec<(String, usize)> {
        self.cnt_text
            .lines()
            .filter_map(|l| l.strip_prefix("- "))
            .filter_map(|l| l.rsplit_once(": "))
            .filter_map(|(c, n)| n.parse().ok().map(|n| (c.to_string(), n)))
            .collect()
    }
}

pub fn build_summary(frame_index: u64, timestamp_s: f64, detections: &[Detection], cfg: &SceneGraphConfig) -> SceneGraphSummary {
    let node_ids: Vec<u32> = (1..=detections.len() as u32).collect();
    let loc_texts = detections
        .iter()
        .zip(&node_ids)
        .map(|(d, id)| {
            let (cx, cy) = d.bbox.center();
            format!(
                "Object {id} is a {} located at coordinates [{}, {}] with dimensions {} \u{d7} {}",
                d.category,
                fmt_num(cx),
                fmt_num(cy),
                fmt_num(d.bbox.length),
                fmt_num(d.bbox.width)
            )
        })
        .collect();

    let mut counts: Vec<(&str, usize)> = Vec::new();
    for d in detections {
        match counts.iter_mut().find(|(c, _)| *c == d.category) {
            Some((_, n)) => *n += 1,
            None => counts.push((&d.category, 1)),
        }
    }
    let cnt_text = if counts.is_empty() {
        String::new()
    } else {
        let mut s = String::from("Object counting:");
        for (c, n) in &counts {
            s.push_str(&format!("\n- {c}: {n}"));
        }
        s
    };

    let mut rel_texts = Vec::with_capacity(detections.len() * detections.len().saturating_sub(1) / 2);
    for i in 0..detections.len() {
        for j in i + 1..detections.len() {
            let (a, b) = (&detections[i], &detections[j]);
            rel_texts.push(format!(
                "Object {} ({}) is {} Object {} ({})",
                node_ids[i],
                a.category,
                positional_description(a, b, cfg),
                node_ids[j],
                b.category
            ));
        }
    }

    SceneGraphSummary { frame_index, timestamp_s, loc_texts, cnt_text, rel_texts, node_ids }
}

/// Detections of one keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub timestamp_s: f64,
    pub detections: Vec<Detection>,
}

pub fn build_summaries(frames: &[FrameDetections], cfg: &SceneGraphConfig) -> Vec<SceneGraphSummary> {
    let one = |f: &FrameDetections| build_summary(f.frame_index, f.timestamp_s, &f.detections, cfg);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        frames.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        frames.iter().map(one).collect()
    }
}
