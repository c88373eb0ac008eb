//! Rectangle and disc selections in embedding coordinates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::windows::WindowProvenance;

/// Rectangle bounds are inclusive; a disc includes its boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionRepr", into = "RegionRepr")]
pub enum Region {
    Rect { x_min: f64, x_max: f64, y_min: f64, y_max: f64 },
    Disc { cx: f64, cy: f64, radius: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum RegionRepr {
    Rect([f64; 4]),
    Disc([f64; 3]),
}

impl TryFrom<RegionRepr> for Region {
    type Error = String;

    fn try_from(r: RegionRepr) -> Result<Self, String> {
        match r {
            RegionRepr::Rect([x0, x1, y0, y1]) => Region::rect(x0, x1, y0, y1),
            RegionRepr::Disc([cx, cy, r]) => Region::disc(cx, cy, r),
        }
    }
}

impl From<Region> for RegionRepr {
    fn from(r: Region) -> Self {
        match r {
            Region::Rect { x_min, x_max, y_min, y_max } => RegionRepr::Rect([x_min, x_max, y_min, y_max]),
            Region::Disc { cx, cy, radius } => RegionRepr::Disc([cx, cy, radius]),
        }
    }
}

impl Region {
    pub fn rect(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Region, String> {
        if ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite()) {
            return Err("rectangle bounds must be finite".into());
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(format!("need x_min < x_max and y_min < y_max, got [{x_min}, {x_max}, {y_min}, {y_max}]"));
        }
        Ok(Region::Rect { x_min, x_max, y_min, y_max })
    }

    pub fn disc(cx: f64, cy: f64, radius: f64) -> Result<Region, String> {
        if !(cx.is_finite() && cy.is_finite() && radius.is_finite()) || radius <= 0.0 {
            return Err(format!("disc needs finite center and radius > 0, got ({cx}, {cy}, {radius})"));
        }
        Ok(Region::Disc { cx, cy, radius })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Region::Rect { x_min, x_max, y_min, y_max } => x >= x_min && x <= x_max && y >= y_min && y <= y_max,
            Region::Disc { cx, cy, radius } => (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius,
        }
    }
}

/// `rect:x0,x1,y0,y1` or `disc:cx,cy,r`.
impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| format!("expected rect:... or disc:..., got {s:?}"))?;
        let nums = parse_list(rest)?;
        match (kind, nums.as_slice()) {
            ("rect", &[x0, x1, y0, y1]) => Region::rect(x0, x1, y0, y1),
            ("disc", &[cx, cy, r]) => Region::disc(cx, cy, r),
            _ => Err(format!("malformed region {s:?}")),
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Rect { x_min, x_max, y_min, y_max } => write!(f, "rect:{x_min},{x_max},{y_min},{y_max}"),
            Region::Disc { cx, cy, radius } => write!(f, "disc:{cx},{cy},{radius}"),
        }
    }
}

/// Comma-separated numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}"))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub ids: Vec<usize>,
    pub per_video: BTreeMap<String, usize>,
}

/// Windows whose embedded coordinate lies in `region`, ascending ids.
pub fn query_region(coords: &Array2<f32>, index: &[WindowProvenance], region: &Region) -> QueryResult {
    let mut ids = Vec::new();
    let mut per_video = BTreeMap::new();
    for (i, row) in coords.rows().into_iter().enumerate() {
        if region.contains(row[0] as f64, row[1] as f64) {
            ids.push(i);
            if let Some(p) = index.get(i) {
                *per_video.entry(p.video_id.clone()).or_insert(0) += 1;
            }
        }
    }
    QueryResult { ids, per_video }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prov(n: usize) -> Vec<WindowProvenance> {
        (0..n).map(|i| WindowProvenance { video_id: format!("v{}", i % 3), start_frame: i }).collect()
    }

    #[test]
    fn json_forms() {
        let r: Region = serde_json::from_str(r#"{"rect":[0,1,2,3]}"#).unwrap();
        assert_eq!(r, Region::Rect { x_min: 0.0, x_max: 1.0, y_min: 2.0, y_max: 3.0 });
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"rect":[0.0,1.0,2.0,3.0]}"#);
        let d: Region = serde_json::from_str(r#"{"disc":[1,1,0.5]}"#).unwrap();
        assert!(d.contains(1.5, 1.0));
        assert!(serde_json::from_str::<Region>(r#"{"rect":[1,0,2,3]}"#).is_err());
        assert!(serde_json::from_str::<Region>(r#"{"disc":[1,1,0]}"#).is_err());
        assert!(serde_json::from_str::<Region>(r#"{"rect":[1,2,3]}"#).is_err());
    }

    #[test]
    fn text_forms_round_trip() {
        let r: Region = "rect:-1,2.5,0,4".parse().unwrap();
        assert_eq!(r.to_string().parse::<Region>().unwrap(), r);
        assert!("disc:0,0".parse::<Region>().is_err());
        assert!("box:0,0,1".parse::<Region>().is_err());
    }

    #[test]
    fn full_box_and_empty_gap() {
        let coords = array![[0.0f32, 0.0], [1.0, 1.0], [5.0, 5.0], [6.0, 6.0]];
        let all = query_region(&coords, &prov(4), &Region::rect(0.0, 6.0, 0.0, 6.0).unwrap());
        assert_eq!(all.ids, vec![0, 1, 2, 3]);
        assert_eq!(all.per_video.values().sum::<usize>(), 4);
        let gap = query_region(&coords, &prov(4), &Region::disc(3.0, 3.0, 1.0).unwrap());
        assert!(gap.ids.is_empty());
    }

    #[test]
    fn rect_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let coords = Array2::from_shape_simple_fn((10_000, 2), || rng.random_range(-10.0f32..10.0));
        let region = Region::rect(-2.0, 3.5, -7.0, 1.25).unwrap();
        let got = query_region(&coords, &prov(10_000), &region);
        let want: Vec<usize> = (0..10_000)
            .filter(|&i| {
                let (x, y) = (coords[[i, 0]] as f64, coords[[i, 1]] as f64);
                (-2.0..=3.5).contains(&x) && (-7.0..=1.25).contains(&y)
            })
            .collect();
        assert_eq!(got.ids, want);
    }
}
