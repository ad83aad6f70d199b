//! Diversity–quality spaces: feasible-region normalization, Coverage,
//! the global Pareto frontier, Dominance and aggregation across spaces.
//!
//! Quality is the x axis and diversity the y axis. After normalization both
//! axes are "higher is better" on [0, 1].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack for points that sit on a region edge up to rounding.
const EDGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

/// One named metric value; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: Option<f64>,
    pub orientation: Orientation,
}

impl MetricValue {
    pub fn new(name: impl Into<String>, value: Option<f64>, orientation: Orientation) -> Self {
        Self { name: name.into(), value, orientation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricGroup {
    Lexical,
    Semantic,
    Discourse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub method: String,
    pub config: String,
    pub quality: f64,
    pub diversity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub diversity_orientation: Orientation,
}

impl FeasibleRegion {
    /// Why the region cannot normalize points, if it cannot.
    pub fn degeneracy(&self) -> Option<String> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite {
            return Some("non-finite anchor".into());
        }
        if self.x_min >= self.x_max {
            return Some(format!("quality anchors not increasing: x_min {} ≥ x_max {}", self.x_min, self.x_max));
        }
        if self.y_min >= self.y_max {
            return Some(format!("diversity anchors not increasing: y_min {} ≥ y_max {}", self.y_min, self.y_max));
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormPoint {
    pub method: String,
    pub config: String,
    pub x: f64,
    pub y: f64,
}

impl NormPoint {
    /// No worse on both axes and strictly better on one.
    pub fn dominates(&self, other: &NormPoint) -> bool {
        self.x >= other.x && self.y >= other.y && (self.x > other.x || self.y > other.y)
    }
}

fn unit(v: f64) -> Option<f64> {
    if (-EDGE_TOLERANCE..=1.0 + EDGE_TOLERANCE).contains(&v) {
        Some(v.clamp(0.0, 1.0))
    } else {
        None
    }
}

/// Map points into the unit square; points outside it are dropped.
pub fn normalize(points: &[TradeoffPoint], region: &FeasibleRegion) -> Result<Vec<NormPoint>> {
    if let Some(why) = region.degeneracy() {
        return Err(Error::Input(format!("degenerate feasible region: {why}")));
    }
    let dx = region.x_max - region.x_min;
    let dy = region.y_max - region.y_min;
    Ok(points
        .iter()
        .filter_map(|p| {
            let x = unit((p.quality - region.x_min) / dx)?;
            let y = match region.diversity_orientation {
                Orientation::HigherBetter => (p.diversity - region.y_min) / dy,
                Orientation::LowerBetter => (region.y_max - p.diversity) / dy,
            };
            let y = unit(y)?;
            Some(NormPoint { method: p.method.clone(), config: p.config.clone(), x, y })
        })
        .collect())
}

/// Nondominated subset sorted by x ascending (hence y strictly descending).
/// Among points at identical coordinates the smallest (method, config)
/// label is kept.
pub fn frontier(points: &[NormPoint]) -> Vec<NormPoint> {
    let mut sorted: Vec<&NormPoint> = points.iter().collect();
    // x descending, then y descending, then label ascending
    sorted.sort_by(|a, b| {
        b.x.total_cmp(&a.x)
            .then(b.y.total_cmp(&a.y))
            .then_with(|| (&a.method, &a.config).cmp(&(&b.method, &b.config)))
    });
    let mut out: Vec<NormPoint> = Vec::new();
    let mut best_y = f64::NEG_INFINITY;
    for p in sorted {
        if p.y > best_y {
            best_y = p.y;
            out.push(p.clone());
        }
    }
    out.reverse();
    out
}

/// The frontier across every method's points.
pub fn global_frontier(points: &[NormPoint]) -> Vec<NormPoint> {
    frontier(points)
}

/// Area under a method's normalized trade-off curve: its nondominated points
/// joined by straight segments and extended horizontally to x = 0 and x = 1,
/// integrated by the trapezoid rule. 0 for no points.
pub fn coverage(points: &[NormPoint]) -> f64 {
    let f = frontier(points);
    let (Some(first), Some(last)) = (f.first(), f.last()) else {
        return 0.0;
    };
    let mut area = first.x * first.y + (1.0 - last.x) * last.y;
    for w in f.windows(2) {
        area += (w[1].x - w[0].x) * (w[0].y + w[1].y) / 2.0;
    }
    area.clamp(0.0, 1.0)
}

/// Length owned by each position along one axis: the interval between the
/// midpoints to its neighbours, the outermost intervals ending at the span.
fn owned_lengths(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    (0..n)
        .map(|i| {
            let lo = if i == 0 { sorted[0] } else { (sorted[i - 1] + sorted[i]) / 2.0 };
            let hi = if i + 1 == n { sorted[n - 1] } else { (sorted[i] + sorted[i + 1]) / 2.0 };
            hi - lo
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    /// Share of the frontier's diversity span.
    pub dom_d: f64,
    /// Share of the frontier's quality span.
    pub dom_q: f64,
    pub dom: f64,
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Each method's share of a frontier along both axes.
pub fn dominance(frontier: &[NormPoint]) -> BTreeMap<String, Dominance> {
    let mut shares: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for p in frontier {
        shares.entry(p.method.clone()).or_insert((0.0, 0.0));
    }
    match frontier.len() {
        0 => {}
        1 => {
            shares.insert(frontier[0].method.clone(), (1.0, 1.0));
        }
        _ => {
            let mut by_x: Vec<&NormPoint> = frontier.iter().collect();
            by_x.sort_by(|a, b| a.x.total_cmp(&b.x));
            let xs: Vec<f64> = by_x.iter().map(|p| p.x).collect();
            let x_span = xs[xs.len() - 1] - xs[0];
            for (p, len) in by_x.iter().zip(owned_lengths(&xs)) {
                shares.get_mut(&p.method).expect("seeded").1 += len / x_span;
            }
            let mut by_y: Vec<&NormPoint> = frontier.iter().collect();
            by_y.sort_by(|a, b| a.y.total_cmp(&b.y));
            let ys: Vec<f64> = by_y.iter().map(|p| p.y).collect();
            let y_span = ys[ys.len() - 1] - ys[0];
            for (p, len) in by_y.iter().zip(owned_lengths(&ys)) {
                shares.get_mut(&p.method).expect("seeded").0 += len / y_span;
            }
        }
    }
    shares.into_iter().map(|(m, (d, q))| (m, Dominance { dom_d: d, dom_q: q, dom: harmonic_mean(d, q) })).collect()
}

/// One diversity metric paired with one quality metric.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpaceId {
    pub diversity: String,
    pub quality: String,
    pub group: MetricGroup,
}

impl SpaceId {
    pub fn name(&self) -> String {
        format!("{}__{}", self.diversity, self.quality)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub coverage: f64,
    pub dom_d: f64,
    pub dom_q: f64,
    pub dom: f64,
    /// Points that survived normalization.
    pub points_in_region: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceResult {
    pub space: SpaceId,
    pub region: FeasibleRegion,
    /// Set when the region is degenerate and the space was skipped.
    pub skipped: Option<String>,
    pub scores: BTreeMap<String, MethodScore>,
    pub frontier: Vec<NormPoint>,
    pub normalized: Vec<NormPoint>,
}

/// Coverage and dominance of every method in one space. Methods appear in
/// the result even when none of their points survive normalization.
pub fn evaluate_space(space: SpaceId, points: &[TradeoffPoint], region: FeasibleRegion) -> SpaceResult {
    let methods: BTreeSet<String> = points.iter().map(|p| p.method.clone()).collect();
    let normalized = match normalize(points, &region) {
        Ok(n) => n,
        Err(e) => {
            return SpaceResult {
                space,
                region,
                skipped: Some(e.to_string()),
                scores: BTreeMap::new(),
                frontier: Vec::new(),
                normalized: Vec::new(),
            }
        }
    };
    let front = global_frontier(&normalized);
    let dom = dominance(&front);
    let scores = methods
        .into_iter()
        .map(|m| {
            let own: Vec<NormPoint> = normalized.iter().filter(|p| p.method == m).cloned().collect();
            let d = dom.get(&m).copied().unwrap_or(Dominance { dom_d: 0.0, dom_q: 0.0, dom: 0.0 });
            let score =
                MethodScore { coverage: coverage(&own), dom_d: d.dom_d, dom_q: d.dom_q, dom: d.dom, points_in_region: own.len() };
            (m, score)
        })
        .collect();
    SpaceResult { space, region, skipped: None, scores, frontier: front, normalized }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rollup {
    Lexical,
    Semantic,
    Discourse,
    Overall,
}

impl Rollup {
    pub fn label(self) -> &'static str {
        match self {
            Rollup::Lexical => "lexical",
            Rollup::Semantic => "semantic",
            Rollup::Discourse => "discourse",
            Rollup::Overall => "overall",
        }
    }

    fn includes(self, g: MetricGroup) -> bool {
        match self {
            Rollup::Overall => true,
            Rollup::Lexical => g == MetricGroup::Lexical,
            Rollup::Semantic => g == MetricGroup::Semantic,
            Rollup::Discourse => g == MetricGroup::Discourse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub rollup: Rollup,
    pub coverage: f64,
    pub dominance: f64,
    /// Spaces averaged.
    pub spaces: usize,
    /// Degenerate spaces left out of the mean.
    pub skipped: usize,
}

/// Mean coverage and dominance per method over each rollup's spaces.
/// Rollups without any evaluated space are omitted.
pub fn aggregate(results: &[SpaceResult]) -> Vec<SummaryRow> {
    let methods: BTreeSet<&String> = results.iter().flat_map(|r| r.scores.keys()).collect();
    let mut rows = Vec::new();
    for m in methods {
        for rollup in [Rollup::Lexical, Rollup::Semantic, Rollup::Discourse, Rollup::Overall] {
            let in_group: Vec<&SpaceResult> = results.iter().filter(|r| rollup.includes(r.space.group)).collect();
            let evaluated: Vec<&SpaceResult> = in_group.iter().copied().filter(|r| r.skipped.is_none()).collect();
            if evaluated.is_empty() {
                continue;
            }
            let skipped = in_group.len() - evaluated.len();
            let zero = MethodScore { coverage: 0.0, dom_d: 0.0, dom_q: 0.0, dom: 0.0, points_in_region: 0 };
            let (cov, dom) = evaluated.iter().fold((0.0, 0.0), |(c, d), r| {
                let s = r.scores.get(m).unwrap_or(&zero);
                (c + s.coverage, d + s.dom)
            });
            let k = evaluated.len() as f64;
            rows.push(SummaryRow {
                method: m.clone(),
                rollup,
                coverage: cov / k,
                dominance: dom / k,
                spaces: evaluated.len(),
                skipped,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn np(method: &str, x: f64, y: f64) -> NormPoint {
        NormPoint { method: method.into(), config: String::new(), x, y }
    }

    fn region(o: Orientation) -> FeasibleRegion {
        FeasibleRegion { x_min: 1.0, x_max: 3.0, y_min: 10.0, y_max: 20.0, diversity_orientation: o }
    }

    fn tp(x: f64, y: f64) -> TradeoffPoint {
        TradeoffPoint { method: "m".into(), config: "c".into(), quality: x, diversity: y }
    }

    #[test]
    fn normalization_anchors() {
        let n = normalize(&[tp(1.0, 10.0), tp(3.0, 20.0), tp(4.0, 15.0)], &region(Orientation::HigherBetter)).unwrap();
        assert_eq!(n.len(), 2);
        assert_eq!((n[0].x, n[0].y), (0.0, 0.0));
        assert_eq!((n[1].x, n[1].y), (1.0, 1.0));
        let n = normalize(&[tp(2.0, 10.0)], &region(Orientation::LowerBetter)).unwrap();
        assert_eq!((n[0].x, n[0].y), (0.5, 1.0));
        let mut bad = region(Orientation::HigherBetter);
        bad.x_max = 1.0;
        assert!(normalize(&[tp(1.0, 10.0)], &bad).is_err());
    }

    #[test]
    fn coverage_fixtures() {
        assert!((coverage(&[np("m", 0.5, 1.0)]) - 1.0).abs() < 1e-12);
        assert!((coverage(&[np("m", 0.0, 1.0), np("m", 1.0, 0.0)]) - 0.5).abs() < 1e-12);
        let three = [np("m", 0.0, 1.0), np("m", 0.5, 0.8), np("m", 1.0, 0.0)];
        assert!((coverage(&three) - 0.65).abs() < 1e-12);
        assert_eq!(coverage(&[]), 0.0);
    }

    #[test]
    fn frontier_fixtures() {
        let pts = [np("a", 1.0, 0.0), np("b", 0.0, 1.0), np("c", 0.5, 0.5)];
        assert_eq!(global_frontier(&pts).len(), 3);
        let f = global_frontier(&[np("a", 0.5, 0.5), np("b", 0.6, 0.6)]);
        assert_eq!(f, vec![np("b", 0.6, 0.6)]);
        let f = global_frontier(&[np("z", 0.5, 0.5), np("a", 0.5, 0.5)]);
        assert_eq!(f, vec![np("a", 0.5, 0.5)]);
    }

    #[test]
    fn dominance_fixtures() {
        let d = dominance(&[np("a", 0.0, 1.0), np("a", 1.0, 0.0)]);
        assert_eq!(d["a"], Dominance { dom_d: 1.0, dom_q: 1.0, dom: 1.0 });
        let d = dominance(&[np("a", 0.3, 0.3)]);
        assert_eq!(d["a"].dom, 1.0);
        assert!((harmonic_mean(0.5, 0.25) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        // a owns [0, 0.25] of x and [0.75, 1] of y
        let d = dominance(&[np("a", 0.0, 1.0), np("b", 0.5, 0.5), np("b", 1.0, 0.0)]);
        assert!((d["a"].dom_q - 0.25).abs() < 1e-12);
        assert!((d["a"].dom_d - 0.25).abs() < 1e-12);
        assert!((d["b"].dom_q - 0.75).abs() < 1e-12);
    }

    #[test]
    fn absent_method_scores_zero() {
        let pts = vec![
            TradeoffPoint { method: "a".into(), config: "1".into(), quality: 3.0, diversity: 20.0 },
            TradeoffPoint { method: "b".into(), config: "1".into(), quality: 2.0, diversity: 15.0 },
        ];
        let space = SpaceId { diversity: "d".into(), quality: "q".into(), group: MetricGroup::Lexical };
        let r = evaluate_space(space, &pts, region(Orientation::HigherBetter));
        assert_eq!(r.scores["a"].dom, 1.0);
        assert_eq!(r.scores["b"].dom, 0.0);
    }

    #[test]
    fn aggregate_means() {
        let mk = |group, cov: f64| {
            let space = SpaceId { diversity: format!("{group:?}"), quality: "q".into(), group };
            let mut scores = BTreeMap::new();
            scores.insert("m".to_string(), MethodScore { coverage: cov, dom_d: 1.0, dom_q: 1.0, dom: 1.0, points_in_region: 1 });
            SpaceResult {
                space,
                region: region(Orientation::HigherBetter),
                skipped: None,
                scores,
                frontier: vec![],
                normalized: vec![],
            }
        };
        let rows = aggregate(&[mk(MetricGroup::Lexical, 0.4), mk(MetricGroup::Semantic, 0.2)]);
        let overall = rows.iter().find(|r| r.rollup == Rollup::Overall).unwrap();
        assert!((overall.coverage - 0.3).abs() < 1e-12);
        assert_eq!(overall.dominance, 1.0);
        assert!(rows.iter().all(|r| r.rollup != Rollup::Discourse));
    }

    fn cloud() -> impl Strategy<Value = Vec<NormPoint>> {
        prop::collection::vec((0usize..3, 0u8..=20, 0u8..=20), 1..40).prop_map(|v| {
            v.into_iter().map(|(m, x, y)| np(["a", "b", "c"][m], x as f64 / 20.0, y as f64 / 20.0)).collect()
        })
    }

    proptest! {
        #[test]
        fn frontier_matches_brute_force(pts in cloud()) {
            let f = global_frontier(&pts);
            let brute: BTreeSet<(u64, u64)> = pts
                .iter()
                .filter(|p| !pts.iter().any(|q| q.dominates(p)))
                .map(|p| (p.x.to_bits(), p.y.to_bits()))
                .collect();
            let got: BTreeSet<(u64, u64)> = f.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
            prop_assert_eq!(got, brute);
            prop_assert_eq!(global_frontier(&f), f.clone());
            for w in f.windows(2) {
                prop_assert!(w[0].x < w[1].x && w[0].y > w[1].y);
            }
        }

        #[test]
        fn dominance_partitions(pts in cloud()) {
            let d = dominance(&global_frontier(&pts));
            let (sd, sq) = d.values().fold((0.0, 0.0), |(a, b), v| (a + v.dom_d, b + v.dom_q));
            prop_assert!((sd - 1.0).abs() < 1e-9 && (sq - 1.0).abs() < 1e-9);
        }

        #[test]
        fn coverage_bounded_and_monotone(pts in cloud(), pick in 0usize..40, dx in 0.0f64..1.0, dy in 0.0f64..1.0) {
            let c = coverage(&pts);
            prop_assert!((0.0..=1.0).contains(&c));
            let base = &pts[pick % pts.len()];
            let mut more = pts.clone();
            more.push(np(&base.method, base.x * dx, base.y * dy));
            prop_assert!(coverage(&more) >= c - 1e-12);
        }

        #[test]
        fn orientation_flip(vals in prop::collection::vec((1.0f64..3.0, 10.0f64..20.0), 1..10)) {
            let pts: Vec<TradeoffPoint> = vals.iter().map(|(x, y)| tp(*x, *y)).collect();
            let lower = normalize(&pts, &region(Orientation::LowerBetter)).unwrap();
            let flipped: Vec<TradeoffPoint> = vals.iter().map(|(x, y)| tp(*x, -*y)).collect();
            let r = FeasibleRegion { y_min: -20.0, y_max: -10.0, ..region(Orientation::HigherBetter) };
            let higher = normalize(&flipped, &r).unwrap();
            prop_assert_eq!(lower.len(), higher.len());
            for (a, b) in lower.iter().zip(&higher) {
                prop_assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
            }
        }
    }
}
