//! Graph views of channel samples and permutation utilities.
//!
//! Two representations:
//! - link graph: one node per BS-user link, fully connected without
//!   self-edges (self information enters through the update's self term),
//!   node features `[Re(h_i); Im(h_i)]`;
//! - bipartite graph: antenna and user nodes, edges in both directions
//!   between every antenna-user pair, CSI carried on the edges.
//!
//! Edge lists are directed `(src, dst)` pairs stored in canonical
//! lexicographic order so equivariance checks compare bitwise.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSample;
use crate::error::{CoreError, Result};
use crate::linalg::CxMat;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    LinkGraph,
    Bipartite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeType {
    Link,
    Antenna,
    User,
}

/// Optional manually-set features on link-graph edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeFeatureMode {
    None,
    /// Normalized channel correlation |h_i^H h_j| / (|h_i| |h_j|).
    Correlation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub k_users: usize,
    pub n_antennas: usize,
    pub sample_id: u64,
}

/// Graph-structured view of one channel sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioGraph {
    pub kind: GraphKind,
    pub node_types: Vec<NodeType>,
    /// Per-node CSI features; `None` for bipartite graphs, whose initial
    /// features are learned constants owned by the model.
    pub node_features: Option<Tensor>,
    /// Message sources, aligned with `dsts`.
    pub srcs: Arc<Vec<usize>>,
    /// Message destinations (aggregation keys).
    pub dsts: Arc<Vec<usize>>,
    pub edge_features: Option<Tensor>,
    pub provenance: Provenance,
}

impl RadioGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_edges(&self) -> usize {
        self.srcs.len()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.node_features.as_ref().map(|f| f.cols())
    }

    pub fn edge_dim(&self) -> Option<usize> {
        self.edge_features.as_ref().map(|f| f.cols())
    }
}

/// User (and antenna) relabelings. Antenna permutation stays identity for
/// link-graph use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMap {
    pub user_perm: Vec<usize>,
    pub antenna_perm: Vec<usize>,
}

fn is_bijection(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &i in p {
        if i >= p.len() || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

impl PermutationMap {
    pub fn new(user_perm: Vec<usize>, antenna_perm: Vec<usize>) -> Result<Self> {
        if !is_bijection(&user_perm) || !is_bijection(&antenna_perm) {
            return Err(CoreError::Config("permutation is not a bijection".into()));
        }
        Ok(PermutationMap { user_perm, antenna_perm })
    }

    pub fn identity(k: usize, n: usize) -> Self {
        PermutationMap { user_perm: (0..k).collect(), antenna_perm: (0..n).collect() }
    }

    pub fn inverse(&self) -> Self {
        let invert = |p: &[usize]| {
            let mut inv = vec![0usize; p.len()];
            for (i, &j) in p.iter().enumerate() {
                inv[j] = i;
            }
            inv
        };
        PermutationMap { user_perm: invert(&self.user_perm), antenna_perm: invert(&self.antenna_perm) }
    }
}

/// Fully connected link graph: node i carries `[Re(h_i); Im(h_i)]`.
pub fn build_link_graph(sample: &ChannelSample, edge_mode: EdgeFeatureMode) -> RadioGraph {
    let k = sample.k_users();
    let n = sample.n_antennas();
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut f = Vec::with_capacity(2 * n);
            f.extend(sample.h.row(i).iter().map(|z| z.re));
            f.extend(sample.h.row(i).iter().map(|z| z.im));
            f
        })
        .collect();
    let features = Tensor::from_rows(&rows);

    let mut srcs = Vec::with_capacity(k.saturating_sub(1) * k);
    let mut dsts = Vec::with_capacity(srcs.capacity());
    for i in 0..k {
        for j in 0..k {
            if i != j {
                srcs.push(i);
                dsts.push(j);
            }
        }
    }

    let edge_features = match edge_mode {
        EdgeFeatureMode::None => None,
        EdgeFeatureMode::Correlation => {
            let norms: Vec<f64> = (0..k)
                .map(|i| sample.h.row(i).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
                .collect();
            let mut rows = Vec::with_capacity(srcs.len());
            for (&i, &j) in srcs.iter().zip(&dsts) {
                let dot: num_complex::Complex64 = sample
                    .h
                    .row(i)
                    .iter()
                    .zip(sample.h.row(j))
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                let denom = norms[i] * norms[j];
                let corr = if denom > 0.0 { dot.norm() / denom } else { 0.0 };
                rows.push(vec![corr]);
            }
            if rows.is_empty() {
                None
            } else {
                Some(Tensor::from_rows(&rows))
            }
        }
    };

    RadioGraph {
        kind: GraphKind::LinkGraph,
        node_types: vec![NodeType::Link; k],
        node_features: Some(features),
        srcs: Arc::new(srcs),
        dsts: Arc::new(dsts),
        edge_features,
        provenance: Provenance { k_users: k, n_antennas: n, sample_id: sample.sample_id },
    }
}

/// Bipartite antenna-user graph: antenna nodes `0..N`, user nodes `N..N+K`,
/// both edge directions, edge feature `[Re(H[k,m]), Im(H[k,m])]`.
pub fn build_bipartite_graph(sample: &ChannelSample) -> RadioGraph {
    let k = sample.k_users();
    let n = sample.n_antennas();
    let mut node_types = vec![NodeType::Antenna; n];
    node_types.extend(vec![NodeType::User; k]);

    let mut srcs = Vec::with_capacity(2 * n * k);
    let mut dsts = Vec::with_capacity(2 * n * k);
    let mut feats = Vec::with_capacity(2 * n * k);
    // canonical order: all edges sorted by (src, dst)
    for m in 0..n {
        for u in 0..k {
            srcs.push(m);
            dsts.push(n + u);
            let z = sample.h.at(u, m);
            feats.push(vec![z.re, z.im]);
        }
    }
    for u in 0..k {
        for m in 0..n {
            srcs.push(n + u);
            dsts.push(m);
            let z = sample.h.at(u, m);
            feats.push(vec![z.re, z.im]);
        }
    }

    RadioGraph {
        kind: GraphKind::Bipartite,
        node_types,
        node_features: None,
        srcs: Arc::new(srcs),
        dsts: Arc::new(dsts),
        edge_features: Some(Tensor::from_rows(&feats)),
        provenance: Provenance { k_users: k, n_antennas: n, sample_id: sample.sample_id },
    }
}

/// Relabel a sample's users/antennas: row k moves to `user_perm[k]`, column
/// n to `antenna_perm[n]`.
pub fn permute_sample(sample: &ChannelSample, perm: &PermutationMap) -> Result<ChannelSample> {
    let k = sample.k_users();
    let n = sample.n_antennas();
    if perm.user_perm.len() != k || perm.antenna_perm.len() != n {
        return Err(CoreError::Dimension(format!(
            "permutation sizes ({}, {}) do not match sample {}x{}",
            perm.user_perm.len(),
            perm.antenna_perm.len(),
            k,
            n
        )));
    }
    let mut h = CxMat::zeros(k, n);
    for i in 0..k {
        for j in 0..n {
            h.set(perm.user_perm[i], perm.antenna_perm[j], sample.h.at(i, j));
        }
    }
    Ok(ChannelSample { h, sample_id: sample.sample_id })
}

/// Relabel graph nodes per the permutation and re-canonicalize the edge
/// list; the result is isomorphic to the input.
pub fn permute_graph(graph: &RadioGraph, perm: &PermutationMap) -> Result<RadioGraph> {
    let k = graph.provenance.k_users;
    let n = graph.provenance.n_antennas;
    if perm.user_perm.len() != k || perm.antenna_perm.len() != n {
        return Err(CoreError::Dimension(format!(
            "permutation sizes ({}, {}) do not match graph provenance {}x{}",
            perm.user_perm.len(),
            perm.antenna_perm.len(),
            k,
            n
        )));
    }
    let node_map: Vec<usize> = match graph.kind {
        GraphKind::LinkGraph => perm.user_perm.clone(),
        GraphKind::Bipartite => {
            let mut m: Vec<usize> = perm.antenna_perm.clone();
            m.extend(perm.user_perm.iter().map(|&u| n + u));
            m
        }
    };

    let num_nodes = graph.num_nodes();
    let mut node_types = vec![NodeType::Link; num_nodes];
    for (old, &new) in node_map.iter().enumerate() {
        node_types[new] = graph.node_types[old];
    }

    let node_features = graph.node_features.as_ref().map(|f| {
        let c = f.cols();
        let mut data = vec![0.0; f.numel()];
        for (old, &new) in node_map.iter().enumerate() {
            data[new * c..(new + 1) * c].copy_from_slice(&f.data()[old * c..(old + 1) * c]);
        }
        Tensor::from_vec(vec![f.rows(), c], data)
    });

    let edge_dim = graph.edge_dim().unwrap_or(0);
    let mut edges: Vec<(usize, usize, Vec<f64>)> = graph
        .srcs
        .iter()
        .zip(graph.dsts.iter())
        .enumerate()
        .map(|(e, (&s, &d))| {
            let feat = graph
                .edge_features
                .as_ref()
                .map(|f| f.data()[e * edge_dim..(e + 1) * edge_dim].to_vec())
                .unwrap_or_default();
            (node_map[s], node_map[d], feat)
        })
        .collect();
    edges.sort_by_key(|&(s, d, _)| (s, d));

    let srcs: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let dsts: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let edge_features = graph.edge_features.as_ref().map(|_| {
        Tensor::from_rows(&edges.iter().map(|e| e.2.clone()).collect::<Vec<_>>())
    });

    Ok(RadioGraph {
        kind: graph.kind,
        node_types,
        node_features,
        srcs: Arc::new(srcs),
        dsts: Arc::new(dsts),
        edge_features,
        provenance: graph.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channels, DatasetHeader};
    use num_complex::Complex64;

    fn sample(k: usize, n: usize, seed: u64) -> ChannelSample {
        let header = DatasetHeader::new(k, n, 1.0, 10.0, 1, seed);
        sample_channels(&header).unwrap().remove(0)
    }

    #[test]
    fn link_graph_counts() {
        let g = build_link_graph(&sample(4, 8, 1), EdgeFeatureMode::None);
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.num_edges(), 12);
        assert_eq!(g.feature_dim(), Some(16));
        assert!(g.edge_features.is_none());
    }

    #[test]
    fn single_user_link_graph_is_edgeless() {
        let g = build_link_graph(&sample(1, 4, 2), EdgeFeatureMode::None);
        assert_eq!(g.num_nodes(), 1);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn correlation_of_orthogonal_rows_is_zero() {
        let mut s = sample(2, 2, 3);
        s.h = CxMat::from_fn(2, 2, |i, j| {
            if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }
        });
        let g = build_link_graph(&s, EdgeFeatureMode::Correlation);
        let f = g.edge_features.unwrap();
        assert_eq!(f.cols(), 1);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bipartite_counts_and_edge_features() {
        let mut s = sample(4, 8, 4);
        s.h.set(0, 0, Complex64::new(1.0, 2.0));
        let g = build_bipartite_graph(&s);
        assert_eq!(g.num_nodes(), 12);
        assert_eq!(g.num_edges(), 64);
        assert_eq!(g.edge_dim(), Some(2));
        // first canonical edge is antenna 0 -> user 0, feature [Re, Im] of H[0,0]
        assert_eq!(g.srcs[0], 0);
        assert_eq!(g.dsts[0], 8);
        let f = g.edge_features.as_ref().unwrap();
        assert_eq!(f.at(0, 0), 1.0);
        assert_eq!(f.at(0, 1), 2.0);
        assert!(f.all_finite());
    }

    #[test]
    fn identity_permutation_is_noop() {
        let s = sample(3, 4, 5);
        let g = build_link_graph(&s, EdgeFeatureMode::Correlation);
        let p = PermutationMap::identity(3, 4);
        assert_eq!(permute_sample(&s, &p).unwrap(), s);
        assert_eq!(permute_graph(&g, &p).unwrap(), g);
    }

    #[test]
    fn permutation_followed_by_inverse_restores() {
        let s = sample(4, 6, 6);
        let p = PermutationMap::new(vec![2, 0, 3, 1], vec![5, 3, 0, 1, 4, 2]).unwrap();
        let there = permute_sample(&s, &p).unwrap();
        let back = permute_sample(&there, &p.inverse()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn swap_on_link_graph_swaps_features_keeps_edges() {
        let s = sample(2, 3, 7);
        let g = build_link_graph(&s, EdgeFeatureMode::None);
        let p = PermutationMap::new(vec![1, 0], vec![0, 1, 2]).unwrap();
        let pg = permute_graph(&g, &p).unwrap();
        let f = g.node_features.as_ref().unwrap();
        let pf = pg.node_features.as_ref().unwrap();
        assert_eq!(pf.data()[..f.cols()], f.data()[f.cols()..]);
        // edge set of a 2-clique is unchanged as a set
        assert_eq!(&*pg.srcs, &vec![0, 1]);
        assert_eq!(&*pg.dsts, &vec![1, 0]);
    }

    #[test]
    fn representation_equivariance_is_exact() {
        for seed in 0..20u64 {
            let s = sample(5, 4, 100 + seed);
            let p = PermutationMap::new(vec![3, 1, 4, 0, 2], (0..4).collect()).unwrap();
            let left = build_link_graph(&permute_sample(&s, &p).unwrap(), EdgeFeatureMode::Correlation);
            let right = permute_graph(&build_link_graph(&s, EdgeFeatureMode::Correlation), &p).unwrap();
            assert_eq!(left, right);
        }
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let s = sample(3, 4, 8);
        let p = PermutationMap::identity(2, 4);
        assert!(permute_sample(&s, &p).is_err());
    }
}
