//! Agglomerative clustering of instruction text for reporting.

use std::fmt::Write as _;

use kodama::{linkage, Method};
use serde::{Deserialize, Serialize};

use crate::codec::fnv1a64;

pub const EMBED_DIM: usize = 512;
const NGRAM: usize = 3;

/// Hashed character trigram counts of the lowercased, space-padded text, L2-normalized.
pub fn embed_instruction(text: &str) -> Vec<f64> {
    let padded: Vec<char> = format!(" {} ", text.trim().to_lowercase()).chars().collect();
    let mut v = vec![0.0; EMBED_DIM];
    for w in padded.windows(NGRAM) {
        let g: String = w.iter().collect();
        v[(fnv1a64(g.as_bytes()) % EMBED_DIM as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot).max(0.0)
}

/// One agglomeration. Clusters `0..n` are leaves; merge `i` creates cluster `n + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTree {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
}

/// Average-linkage hierarchy over the instructions' embeddings. Fewer than two
/// instructions give a tree with no merges.
pub fn cluster_instructions(instructions: &[String]) -> ClusterTree {
    let n = instructions.len();
    if n < 2 {
        return ClusterTree {
            labels: instructions.to_vec(),
            merges: Vec::new(),
        };
    }
    let vecs: Vec<Vec<f64>> = instructions.iter().map(|s| embed_instruction(s)).collect();
    let mut condensed = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n - 1 {
        for j in i + 1..n {
            condensed.push(cosine_distance(&vecs[i], &vecs[j]));
        }
    }
    let dend = linkage(&mut condensed, n, Method::Average);
    let merges = dend
        .steps()
        .iter()
        .map(|s| Merge {
            left: s.cluster1.min(s.cluster2),
            right: s.cluster1.max(s.cluster2),
            height: s.dissimilarity,
            size: s.size,
        })
        .collect();
    ClusterTree {
        labels: instructions.to_vec(),
        merges,
    }
}

impl ClusterTree {
    pub fn root(&self) -> usize {
        if self.merges.is_empty() {
            0
        } else {
            self.labels.len() + self.merges.len() - 1
        }
    }

    /// Leaf indices under `cluster`, left to right.
    pub fn leaves(&self, cluster: usize) -> Vec<usize> {
        let n = self.labels.len();
        let mut out = Vec::new();
        let mut stack = vec![cluster];
        while let Some(c) = stack.pop() {
            if c < n {
                out.push(c);
            } else {
                let m = &self.merges[c - n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        out
    }

    /// Flat assignment into at most `k` clusters by undoing the top `k - 1` merges.
    pub fn cut(&self, k: usize) -> Vec<usize> {
        let n = self.labels.len();
        let keep = self.merges.len().saturating_sub(k.max(1) - 1);
        let mut parent: Vec<usize> = (0..n + keep).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        for (i, m) in self.merges[..keep].iter().enumerate() {
            let (a, b) = (find(&mut parent, m.left), find(&mut parent, m.right));
            parent[a] = n + i;
            parent[b] = n + i;
        }
        let mut ids = std::collections::BTreeMap::new();
        (0..n)
            .map(|leaf| {
                let r = find(&mut parent, leaf);
                let next = ids.len();
                *ids.entry(r).or_insert(next)
            })
            .collect()
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if self.labels.is_empty() {
            return out;
        }
        self.render_node(self.root(), 0, &mut out);
        out
    }

    fn render_node(&self, c: usize, depth: usize, out: &mut String) {
        let n = self.labels.len();
        let pad = "  ".repeat(depth);
        if c < n {
            let _ = writeln!(out, "{pad}- {}", self.labels[c]);
        } else {
            let m = &self.merges[c - n];
            let _ = writeln!(out, "{pad}+ {:.3} ({} items)", m.height, m.size);
            self.render_node(m.left, depth + 1, out);
            self.render_node(m.right, depth + 1, out);
        }
    }

    /// A wheel: leaves around a circle in dendrogram order, colored by a `k`-way cut.
    pub fn render_svg(&self, k: usize) -> String {
        const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f"];
        let size = 800.0;
        let c = size / 2.0;
        let r = 220.0;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
        );
        if self.labels.is_empty() {
            svg.push_str("</svg>\n");
            return svg;
        }
        let assign = self.cut(k);
        let order = self.leaves(self.root());
        let n = order.len() as f64;
        for (i, &leaf) in order.iter().enumerate() {
            let theta = (i as f64 + 0.5) / n * std::f64::consts::TAU;
            let (x, y) = (c + r * theta.cos(), c + r * theta.sin());
            let color = PALETTE[assign[leaf] % PALETTE.len()];
            let deg = theta.to_degrees();
            let (deg, anchor) = if deg > 90.0 && deg < 270.0 { (deg - 180.0, "end") } else { (deg, "start") };
            let _ = writeln!(svg, "  <circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"5\" fill=\"{color}\"/>");
            let (tx, ty) = (c + (r + 12.0) * theta.cos(), c + (r + 12.0) * theta.sin());
            let _ = writeln!(
                svg,
                "  <text x=\"{tx:.1}\" y=\"{ty:.1}\" font-size=\"10\" font-family=\"sans-serif\" text-anchor=\"{anchor}\" transform=\"rotate({deg:.1} {tx:.1} {ty:.1})\">{}</text>",
                xml_escape(&self.labels[leaf])
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

pub(crate) fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
