//! Structural statistics for comparing real and synthetic graphs.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{graph_summary, largest_connected_component, Graph};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("power-law fit needs at least 2 non-isolated nodes, found {0}")]
    TooFewNodes(usize),
    #[error("all degrees equal the minimum degree; the log-sum vanishes")]
    DegenerateDegrees,
}

/// Number of unordered node triples spanning three edges.
pub fn count_triangles(g: &Graph) -> u64 {
    (0..g.n())
        .into_par_iter()
        .map(|u| {
            let nu = g.neighbors(u);
            let mut count = 0u64;
            for &v in nu.iter().filter(|&&v| v > u) {
                let nv = g.neighbors(v);
                // common neighbors w > v, by merging sorted lists
                let (mut i, mut j) = (nu.partition_point(|&w| w <= v), nv.partition_point(|&w| w <= v));
                while i < nu.len() && j < nv.len() {
                    match nu[i].cmp(&nv[j]) {
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => j += 1,
                        std::cmp::Ordering::Equal => {
                            count += 1;
                            i += 1;
                            j += 1;
                        }
                    }
                }
            }
            count
        })
        .sum()
}

/// Number of distinct 4-cycles. Each cycle has two diagonals, and a pair
/// with `c` common neighbors closes `C(c, 2)` cycles across it, so the count
/// is half the sum over unordered pairs.
pub fn count_squares(g: &Graph) -> u64 {
    let n = g.n();
    let twice: u64 = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0u32; n], Vec::new()),
            |(common, touched), u| {
                for &v in g.neighbors(u) {
                    for &w in g.neighbors(v) {
                        if w > u {
                            if common[w] == 0 {
                                touched.push(w);
                            }
                            common[w] += 1;
                        }
                    }
                }
                let mut acc = 0u64;
                for &w in touched.iter() {
                    let c = u64::from(common[w]);
                    acc += c * (c.saturating_sub(1)) / 2;
                    common[w] = 0;
                }
                touched.clear();
                acc
            },
        )
        .sum();
    twice / 2
}

/// Triangles through each node.
pub fn node_triangles(g: &Graph) -> Vec<u64> {
    (0..g.n())
        .into_par_iter()
        .map(|u| {
            let nu = g.neighbors(u);
            let mut t = 0u64;
            for (a, &v) in nu.iter().enumerate() {
                for &w in &nu[a + 1..] {
                    if g.has_edge(v, w) {
                        t += 1;
                    }
                }
            }
            t
        })
        .collect()
}

/// Mean local clustering over non-isolated nodes (degree-1 nodes count as 0).
/// `None` when every node is isolated.
pub fn clustering_coefficient(g: &Graph) -> Option<f64> {
    let tri = node_triangles(g);
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in 0..g.n() {
        let d = g.degree(v) as u64;
        if d == 0 {
            continue;
        }
        count += 1;
        if d >= 2 {
            sum += tri[v] as f64 / (d * (d - 1) / 2) as f64;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Pearson correlation of endpoint degrees over both orientations of every
/// edge. `None` without edges or when all endpoint degrees are equal.
pub fn degree_assortativity(g: &Graph) -> Option<f64> {
    // exact integer moments; one rounding at the end
    let (mut s1, mut s2, mut s11) = (0i128, 0i128, 0i128);
    for &(u, v) in g.edges() {
        let (du, dv) = (g.degree(u) as i128, g.degree(v) as i128);
        s1 += du + dv;
        s2 += du * du + dv * dv;
        s11 += 2 * du * dv;
    }
    let m = 2 * g.num_edges() as i128;
    let den = m * s2 - s1 * s1;
    if m == 0 || den == 0 {
        return None;
    }
    Some((m * s11 - s1 * s1) as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerLawVariant {
    /// `ln(d / (d_min - 1/2))`, the discrete-data correction.
    Shifted,
    /// `ln(d / d_min)`.
    Unshifted,
}

/// Continuous maximum-likelihood power-law exponent over the positive
/// degrees, with `d_min` the smallest positive degree.
pub fn power_law_exponent_with(degrees: &[usize], variant: PowerLawVariant) -> Result<f64, MetricsError> {
    let pos: Vec<f64> = degrees.iter().filter(|&&d| d > 0).map(|&d| d as f64).collect();
    if pos.len() < 2 {
        return Err(MetricsError::TooFewNodes(pos.len()));
    }
    let d_min = pos.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = match variant {
        PowerLawVariant::Shifted => d_min - 0.5,
        PowerLawVariant::Unshifted => d_min,
    };
    let log_sum: f64 = pos.iter().map(|&d| (d / scale).ln()).sum();
    if log_sum <= 0.0 {
        return Err(MetricsError::DegenerateDegrees);
    }
    Ok(1.0 + pos.len() as f64 / log_sum)
}

pub fn power_law_exponent(g: &Graph) -> Result<f64, MetricsError> {
    power_law_exponent_with(&g.degrees(), PowerLawVariant::Shifted)
}

/// BFS distances from `s`; `usize::MAX` marks unreachable nodes.
pub fn bfs_distances(g: &Graph, s: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.n()];
    let mut queue = VecDeque::from([s]);
    dist[s] = 0;
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Mean shortest-path length over pairs in the largest connected component.
/// `None` when that component has fewer than two nodes.
pub fn characteristic_path_length(g: &Graph) -> Option<f64> {
    let lcc = largest_connected_component(g);
    let size = lcc.len() as u64;
    if size < 2 {
        return None;
    }
    let total: u64 = lcc
        .members()
        .par_iter()
        .map(|&s| bfs_distances(g, s).iter().filter(|&&d| d != usize::MAX).map(|&d| d as u64).sum::<u64>())
        .sum();
    Some(total as f64 / (size * (size - 1)) as f64)
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// The full statistic battery for one graph. Undefined ratio metrics are
/// NaN (null in JSON) and named in `flags`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsReport {
    /// Non-isolated nodes.
    pub num_nodes: usize,
    pub num_edges: usize,
    pub triangles: u64,
    pub squares: u64,
    pub max_degree: usize,
    #[serde(with = "nan_as_null")]
    pub clustering_coef: f64,
    #[serde(with = "nan_as_null")]
    pub assortativity: f64,
    #[serde(with = "nan_as_null")]
    pub power_law_exp: f64,
    #[serde(with = "nan_as_null")]
    pub cpl: f64,
    pub flags: Vec<String>,
}

impl PartialEq for StatsReport {
    /// NaN fields compare equal to NaN.
    fn eq(&self, o: &Self) -> bool {
        let same = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        self.num_nodes == o.num_nodes
            && self.num_edges == o.num_edges
            && self.triangles == o.triangles
            && self.squares == o.squares
            && self.max_degree == o.max_degree
            && same(self.clustering_coef, o.clustering_coef)
            && same(self.assortativity, o.assortativity)
            && same(self.power_law_exp, o.power_law_exp)
            && same(self.cpl, o.cpl)
            && self.flags == o.flags
    }
}

pub const CSV_COLUMNS: [&str; 9] = [
    "num_nodes",
    "num_edges",
    "triangles",
    "squares",
    "max_degree",
    "clustering_coef",
    "assortativity",
    "power_law_exp",
    "cpl",
];

fn fmt_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.5}")
    } else {
        "nan".into()
    }
}

impl StatsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Values in [`CSV_COLUMNS`] order.
    pub fn values(&self) -> [String; 9] {
        [
            self.num_nodes.to_string(),
            self.num_edges.to_string(),
            self.triangles.to_string(),
            self.squares.to_string(),
            self.max_degree.to_string(),
            fmt_real(self.clustering_coef),
            fmt_real(self.assortativity),
            fmt_real(self.power_law_exp),
            fmt_real(self.cpl),
        ]
    }
}

pub fn stats_report(g: &Graph) -> StatsReport {
    let (num_nodes, num_edges) = graph_summary(g);
    let mut flags = Vec::new();
    let mut flagged = |name: &str, v: Option<f64>| {
        v.unwrap_or_else(|| {
            flags.push(name.to_string());
            f64::NAN
        })
    };
    let clustering_coef = flagged("clustering_coef", clustering_coefficient(g));
    let assortativity = flagged("assortativity", degree_assortativity(g));
    let power_law_exp = flagged("power_law_exp", power_law_exponent(g).ok());
    let cpl = flagged("cpl", characteristic_path_length(g));
    StatsReport {
        num_nodes,
        num_edges,
        triangles: count_triangles(g),
        squares: count_squares(g),
        max_degree: g.degrees().into_iter().max().unwrap_or(0),
        clustering_coef,
        assortativity,
        power_law_exp,
        cpl,
        flags,
    }
}

/// `label,<columns>` CSV, one row per report.
pub fn comparison_csv(rows: &[(&str, &StatsReport)]) -> String {
    let mut out = format!("label,{}\n", CSV_COLUMNS.join(","));
    for (label, r) in rows {
        let _ = writeln!(out, "{label},{}", r.values().join(","));
    }
    out
}

/// Aligned plain-text table with the same content as [`comparison_csv`].
pub fn comparison_text(rows: &[(&str, &StatsReport)]) -> String {
    let mut table: Vec<Vec<String>> = vec![std::iter::once("graph".to_string())
        .chain(CSV_COLUMNS.iter().map(|c| c.to_string()))
        .collect()];
    for (label, r) in rows {
        table.push(std::iter::once(label.to_string()).chain(r.values()).collect());
    }
    let widths: Vec<usize> = (0..table[0].len()).map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (v, &w))| if i == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;

    fn complete(n: usize) -> Graph {
        Graph::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    fn cycle(n: usize) -> Graph {
        Graph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    pub(crate) fn random_graph(seed: u64, max_n: usize) -> Graph {
        let mut rng = substream(seed, "metric-graph", &[]);
        let n = rng.gen_range(1..=max_n);
        let p = rng.gen_range(0.05..0.9);
        let edges: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|_| rng.gen_bool(p)).collect();
        Graph::from_edges(n, edges)
    }

    #[test]
    fn small_examples() {
        assert_eq!(count_triangles(&complete(4)), 4);
        assert_eq!(count_triangles(&cycle(5)), 0);
        assert_eq!(count_squares(&cycle(4)), 1);
        assert_eq!(count_squares(&complete(4)), 3);

        let tri = complete(3);
        assert_eq!(clustering_coefficient(&tri), Some(1.0));
        assert_eq!(degree_assortativity(&tri), None);
        let star = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]);
        assert_eq!(clustering_coefficient(&star), Some(0.0));
        assert_eq!(degree_assortativity(&star), Some(-1.0));

        assert_eq!(characteristic_path_length(&complete(6)), Some(1.0));
        let path = Graph::from_edges(3, [(0, 1), (1, 2)]);
        assert!((characteristic_path_length(&path).unwrap() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn power_law_examples() {
        let a = power_law_exponent_with(&[1, 1, 1], PowerLawVariant::Shifted).unwrap();
        assert!((a - (1.0 + 1.0 / 2f64.ln())).abs() < 1e-12);
        assert!((a - 2.4427).abs() < 1e-4);
        let b = power_law_exponent_with(&[1, 2, 4], PowerLawVariant::Shifted).unwrap();
        assert!((b - (1.0 + 3.0 / (2f64.ln() + 4f64.ln() + 8f64.ln()))).abs() < 1e-12);
        assert_eq!(power_law_exponent_with(&[2, 2, 2], PowerLawVariant::Unshifted), Err(MetricsError::DegenerateDegrees));
        assert_eq!(power_law_exponent_with(&[0, 3], PowerLawVariant::Shifted), Err(MetricsError::TooFewNodes(1)));
    }

    #[test]
    fn empty_graph_report_is_flagged() {
        let r = stats_report(&Graph::empty(5));
        assert_eq!((r.num_nodes, r.num_edges, r.triangles, r.squares, r.max_degree), (0, 0, 0, 0, 0));
        assert_eq!(r.flags, vec!["clustering_coef", "assortativity", "power_law_exp", "cpl"]);
        let back: StatsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn metrics_match_oracles_on_random_graphs() {
        for seed in 0..100 {
            let g = random_graph(seed, 12);
            assert_eq!(count_triangles(&g), oracle::triangles(&g), "seed {seed}");
            assert_eq!(count_squares(&g), oracle::squares(&g), "seed {seed}");
            let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
                (None, None) => true,
                _ => false,
            };
            assert!(close(clustering_coefficient(&g), oracle::clustering(&g)), "seed {seed}");
            assert!(close(degree_assortativity(&g), oracle::assortativity(&g)), "seed {seed}");
            assert_eq!(characteristic_path_length(&g), oracle::cpl(&g), "seed {seed}");
        }
    }

    #[test]
    fn comparison_tables_line_up() {
        let a = stats_report(&complete(5));
        let b = stats_report(&cycle(6));
        let csv = comparison_csv(&[("real", &a), ("synthetic", &b)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.split(',').count() == 10));
        assert!(lines[1].starts_with("real,5,10,10,15,4,1.00000,nan,"));
        let text = comparison_text(&[("real", &a), ("synthetic", &b)]);
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn cpl_invariant_under_relabeling(seed in 0u64..10_000, shift in 0usize..50) {
            let g = random_graph(seed, 15);
            let n = g.n();
            // equal-size largest components may legitimately differ in CPL
            let all: Vec<usize> = (0..n).collect();
            let mut sizes: Vec<usize> = crate::graph::components_within(&g, &all).iter().map(Vec::len).collect();
            sizes.sort_unstable_by(|a, b| b.cmp(a));
            prop_assume!(sizes.len() < 2 || sizes[0] > sizes[1]);
            let mut rng = substream(seed, "perm", &[shift as u64]);
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let h = Graph::from_edges(n, g.edges().iter().map(|&(u, v)| (perm[u], perm[v])));
            let (a, b) = (characteristic_path_length(&g), characteristic_path_length(&h));
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn assortativity_invariant_under_edge_order(seed in 0u64..10_000) {
            let g = random_graph(seed, 15);
            let mut edges = g.edges().to_vec();
            edges.reverse();
            let h = Graph::from_edges(g.n(), edges.into_iter().map(|(u, v)| (v, u)));
            prop_assert_eq!(degree_assortativity(&g), degree_assortativity(&h));
        }

        #[test]
        fn ratio_metrics_in_range(seed in 0u64..10_000) {
            let g = random_graph(seed, 20);
            if let Some(c) = clustering_coefficient(&g) {
                prop_assert!((0.0..=1.0).contains(&c));
            }
            if let Some(r) = degree_assortativity(&g) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            }
        }
    }
}
