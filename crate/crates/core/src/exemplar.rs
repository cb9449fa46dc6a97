//! Exemplar retrieval: exact k-nearest-neighbour search over joint
//! embeddings via a k-d tree, coarse k-means quantisation for opposing
//! exemplars, and distance-bucket selection for quintuplets.
//!
//! All queries are exact (no approximation); equal distances are broken
//! by the lower id so every result is reproducible.

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BinaryHeap;
use std::collections::HashMap;

/// Embeddings plus their item ids, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    ids: Vec<u32>,
    embeddings: Matrix,
}

impl EmbeddingStore {
    pub fn new(ids: Vec<u32>, embeddings: Matrix) -> Result<Self> {
        if ids.len() != embeddings.rows() {
            return Err(Error::ShapeMismatch {
                op: "EmbeddingStore",
                left: format!("{} ids", ids.len()),
                right: format!("{} embedding rows", embeddings.rows()),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for &id in &ids {
            if !seen.insert(id) {
                return Err(Error::InvalidArgument {
                    op: "EmbeddingStore",
                    msg: format!("duplicate id {id}"),
                });
            }
        }
        Ok(Self { ids, embeddings })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        self.embeddings.row(r)
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-d tree node: splits store the partition plane, leaves an index
/// range into the permutation array.
#[derive(Debug, Clone, PartialEq)]
pub enum KdNode {
    Leaf {
        start: u32,
        len: u32,
    },
    Split {
        dim: u32,
        value: f64,
        left: u32,
        right: u32,
    },
}

const LEAF_SIZE: usize = 16;

/// Exact nearest-neighbour index. Immutable after build; concurrent
/// queries are safe.
#[derive(Debug, Clone, PartialEq)]
pub struct KdIndex {
    store: EmbeddingStore,
    perm: Vec<u32>,
    nodes: Vec<KdNode>,
    root: u32,
    by_id: HashMap<u32, u32>,
}

/// A k-NN candidate ordered by (distance, id); the heap keeps the worst
/// candidate on top so lower ids win ties.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl KdIndex {
    /// Build the tree: split on the widest-spread dimension, leaves hold
    /// at most 16 points.
    pub fn build(store: EmbeddingStore) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::EmptyInput { op: "KdIndex::build" });
        }
        let n = store.len();
        let mut perm: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::new();
        let root = build_node(&store, &mut perm, &mut nodes, 0, n);
        let by_id = store
            .ids
            .iter()
            .enumerate()
            .map(|(row, &id)| (id, row as u32))
            .collect();
        Ok(Self {
            store,
            perm,
            nodes,
            root,
            by_id,
        })
    }

    /// Rebuild from persisted parts; validates the permutation.
    pub fn from_parts(
        store: EmbeddingStore,
        perm: Vec<u32>,
        nodes: Vec<KdNode>,
        root: u32,
    ) -> Result<Self> {
        if perm.len() != store.len() || nodes.is_empty() || root as usize >= nodes.len() {
            return Err(Error::CorruptPayload {
                msg: "kd-index parts are inconsistent".into(),
            });
        }
        let by_id = store
            .ids
            .iter()
            .enumerate()
            .map(|(row, &id)| (id, row as u32))
            .collect();
        Ok(Self {
            store,
            perm,
            nodes,
            root,
            by_id,
        })
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn parts(&self) -> (&EmbeddingStore, &[u32], &[KdNode], u32) {
        (&self.store, &self.perm, &self.nodes, self.root)
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    fn row_of(&self, id: u32) -> Result<u32> {
        self.by_id.get(&id).copied().ok_or(Error::InvalidArgument {
            op: "knn",
            msg: format!("id {id} is not in the index"),
        })
    }

    /// The `k` nearest stored items to the stored item `query_id`,
    /// excluding the item itself. Euclidean distance, ties to lower id.
    pub fn knn(&self, query_id: u32, k: usize) -> Result<Vec<u32>> {
        if k >= self.len() {
            return Err(Error::KTooLarge { k, n: self.len() });
        }
        let row = self.row_of(query_id)?;
        Ok(self.search(self.store.row(row as usize), k, Some(query_id)))
    }

    /// The `k` nearest stored items to an arbitrary point (no exclusion).
    pub fn knn_point(&self, point: &[f64], k: usize) -> Result<Vec<u32>> {
        if point.len() != self.store.dim() {
            return Err(Error::ShapeMismatch {
                op: "knn_point",
                left: format!("query dim {}", point.len()),
                right: format!("index dim {}", self.store.dim()),
            });
        }
        if k > self.len() {
            return Err(Error::KTooLarge { k, n: self.len() });
        }
        Ok(self.search(point, k, None))
    }

    fn search(&self, query: &[f64], k: usize, exclude: Option<u32>) -> Vec<u32> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search_node(self.root, query, k, exclude, &mut heap);
        let mut found: Vec<Candidate> = heap.into_vec();
        found.sort();
        found.into_iter().map(|c| c.id).collect()
    }

    fn search_node(
        &self,
        node: u32,
        query: &[f64],
        k: usize,
        exclude: Option<u32>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match &self.nodes[node as usize] {
            KdNode::Leaf { start, len } => {
                for &row in &self.perm[*start as usize..(*start + *len) as usize] {
                    let id = self.store.ids[row as usize];
                    if Some(id) == exclude {
                        continue;
                    }
                    let cand = Candidate {
                        dist: dist_sq(query, self.store.row(row as usize)),
                        id,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            KdNode::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[*dim as usize] - value;
                let (near, far) = if diff < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search_node(near, query, k, exclude, heap);
                // Visit the far side unless the plane is provably
                // farther than the current worst candidate.
                let prune = heap.len() == k && diff * diff > heap.peek().unwrap().dist;
                if !prune {
                    self.search_node(far, query, k, exclude, heap);
                }
            }
        }
    }

    /// All ids reachable from the leaves, used for structural checks.
    pub fn reachable_ids(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .perm
            .iter()
            .map(|&row| self.store.ids[row as usize])
            .collect();
        out.sort_unstable();
        out
    }
}

fn build_node(
    store: &EmbeddingStore,
    perm: &mut [u32],
    nodes: &mut Vec<KdNode>,
    offset: usize,
    len: usize,
) -> u32 {
    let slice = &mut perm[offset..offset + len];
    let make_leaf = |nodes: &mut Vec<KdNode>| {
        nodes.push(KdNode::Leaf {
            start: offset as u32,
            len: len as u32,
        });
        (nodes.len() - 1) as u32
    };
    if len <= LEAF_SIZE {
        return make_leaf(nodes);
    }
    // Widest-spread dimension over this slice.
    let dim_count = store.dim();
    let mut best_dim = 0;
    let mut best_spread = -1.0;
    for d in 0..dim_count {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &row in slice.iter() {
            let x = store.row(row as usize)[d];
            lo = lo.min(x);
            hi = hi.max(x);
        }
        let spread = hi - lo;
        if spread > best_spread {
            best_spread = spread;
            best_dim = d;
        }
    }
    if best_spread <= 0.0 {
        // Every point in the slice is identical; nothing to split on.
        return make_leaf(nodes);
    }
    slice.sort_unstable_by(|&a, &b| {
        store.row(a as usize)[best_dim]
            .total_cmp(&store.row(b as usize)[best_dim])
            .then(a.cmp(&b))
    });
    let mid = len / 2;
    let value = store.row(slice[mid] as usize)[best_dim];
    let left = build_node(store, perm, nodes, offset, mid);
    let right = build_node(store, perm, nodes, offset + mid, len - mid);
    nodes.push(KdNode::Split {
        dim: best_dim as u32,
        value,
        left,
        right,
    });
    (nodes.len() - 1) as u32
}

/// Coarse quantisation of the store plus, per cluster, the other
/// clusters ordered by centroid distance (rank 0 is the cluster itself).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOrdering {
    n_clusters: usize,
    /// Per store row.
    assignment: Vec<u32>,
    ids: Vec<u32>,
    centroids: Matrix,
    /// Cluster -> member ids, ascending.
    members: Vec<Vec<u32>>,
    /// Cluster -> all clusters sorted by centroid distance.
    ordering: Vec<Vec<u32>>,
    by_id: HashMap<u32, u32>,
}

impl ClusterOrdering {
    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn cluster_of(&self, id: u32) -> Result<u32> {
        let row = self.by_id.get(&id).copied().ok_or(Error::InvalidArgument {
            op: "cluster_of",
            msg: format!("id {id} is not in the quantisation"),
        })?;
        Ok(self.assignment[row as usize])
    }

    pub fn members(&self, cluster: u32) -> &[u32] {
        &self.members[cluster as usize]
    }

    pub fn ordering_from(&self, cluster: u32) -> &[u32] {
        &self.ordering[cluster as usize]
    }

    /// Cluster whose centroid is nearest to an arbitrary point; used to
    /// place held-out items.
    pub fn nearest_cluster(&self, point: &[f64]) -> Result<u32> {
        if point.len() != self.centroids.cols() {
            return Err(Error::ShapeMismatch {
                op: "nearest_cluster",
                left: format!("point dim {}", point.len()),
                right: format!("centroid dim {}", self.centroids.cols()),
            });
        }
        let mut best = 0u32;
        let mut best_d = f64::INFINITY;
        for c in 0..self.n_clusters {
            let d = dist_sq(point, self.centroids.row(c));
            if d < best_d {
                best_d = d;
                best = c as u32;
            }
        }
        Ok(best)
    }
}

/// Lloyd k-means with seeded initialisation from distinct data points.
/// Stops after 100 iterations or when no centroid moves more than 1e-6.
pub fn cluster_quantize(store: &EmbeddingStore, n_clusters: usize, seed: u64) -> Result<ClusterOrdering> {
    let n = store.len();
    if n_clusters == 0 || n < n_clusters {
        return Err(Error::TooFewPoints { n, n_clusters });
    }
    let dim = store.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Seeded sample of distinct rows as initial centroids.
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let mut centroids = Matrix::zeros(n_clusters, dim);
    for (c, &row) in rows.iter().take(n_clusters).enumerate() {
        centroids.as_mut_slice()[c * dim..(c + 1) * dim].copy_from_slice(store.row(row));
    }

    let mut assignment = vec![0u32; n];
    for _ in 0..100 {
        // Assign to the nearest centroid, ties to the lower cluster.
        for (row, slot) in assignment.iter_mut().enumerate() {
            let p = store.row(row);
            let mut best = 0u32;
            let mut best_d = f64::INFINITY;
            for c in 0..n_clusters {
                let d = dist_sq(p, centroids.row(c));
                if d < best_d {
                    best_d = d;
                    best = c as u32;
                }
            }
            *slot = best;
        }
        // Recompute means; empty clusters keep their centroid.
        let mut sums = vec![0.0; n_clusters * dim];
        let mut counts = vec![0usize; n_clusters];
        for (row, &c) in assignment.iter().enumerate() {
            counts[c as usize] += 1;
            for (s, &x) in sums[c as usize * dim..(c as usize + 1) * dim]
                .iter_mut()
                .zip(store.row(row))
            {
                *s += x;
            }
        }
        let mut movement = 0.0f64;
        for c in 0..n_clusters {
            if counts[c] == 0 {
                continue;
            }
            for d in 0..dim {
                let new = sums[c * dim + d] / counts[c] as f64;
                let old = centroids.at(c, d);
                movement = movement.max((new - old).abs());
                *centroids.at_mut(c, d) = new;
            }
        }
        if movement < 1e-6 {
            break;
        }
    }

    let mut members: Vec<Vec<u32>> = vec![Vec::new(); n_clusters];
    for (row, &c) in assignment.iter().enumerate() {
        members[c as usize].push(store.ids[row]);
    }
    for m in &mut members {
        m.sort_unstable();
    }
    let mut ordering = Vec::with_capacity(n_clusters);
    for c in 0..n_clusters {
        let mut order: Vec<u32> = (0..n_clusters as u32).collect();
        order.sort_by(|&a, &b| {
            dist_sq(centroids.row(c), centroids.row(a as usize))
                .total_cmp(&dist_sq(centroids.row(c), centroids.row(b as usize)))
                .then(a.cmp(&b))
        });
        ordering.push(order);
    }
    let by_id = store
        .ids
        .iter()
        .enumerate()
        .map(|(row, &id)| (id, row as u32))
        .collect();
    Ok(ClusterOrdering {
        n_clusters,
        assignment,
        ids: store.ids.clone(),
        centroids,
        members,
        ordering,
        by_id,
    })
}

/// `count` ids drawn (seeded) from the cluster `offset` ranks away from
/// the target's cluster in the centroid-distance ordering. Thin clusters
/// spill to ranks offset+1, offset-1, offset+2, ...
pub fn pick_opposing(
    ordering: &ClusterOrdering,
    target_id: u32,
    offset: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    pick_opposing_excluding(ordering, target_id, offset, count, seed, &[])
}

/// `pick_opposing` with an extra exclusion list (used to keep opposing
/// picks disjoint from already-chosen supports).
pub fn pick_opposing_excluding(
    ordering: &ClusterOrdering,
    target_id: u32,
    offset: usize,
    count: usize,
    seed: u64,
    exclude: &[u32],
) -> Result<Vec<u32>> {
    if offset >= ordering.n_clusters() {
        return Err(Error::InvalidArgument {
            op: "pick_opposing",
            msg: format!(
                "offset {offset} out of range for {} clusters",
                ordering.n_clusters()
            ),
        });
    }
    let home = ordering.cluster_of(target_id)?;
    let ranks = spill_ranks(offset, ordering.n_clusters());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(count);
    for rank in ranks {
        if picked.len() >= count {
            break;
        }
        let cluster = ordering.ordering_from(home)[rank];
        let mut eligible: Vec<u32> = ordering
            .members(cluster)
            .iter()
            .copied()
            .filter(|&id| id != target_id && !exclude.contains(&id) && !picked.contains(&id))
            .collect();
        eligible.shuffle(&mut rng);
        for id in eligible {
            if picked.len() >= count {
                break;
            }
            picked.push(id);
        }
    }
    if picked.is_empty() {
        return Err(Error::NoEligibleIds);
    }
    Ok(picked)
}

/// Rank visit order: offset, offset+1, offset-1, offset+2, offset-2, ...
fn spill_ranks(offset: usize, n_clusters: usize) -> Vec<usize> {
    let mut out = vec![offset];
    let mut step = 1usize;
    while out.len() < n_clusters {
        if offset + step < n_clusters {
            out.push(offset + step);
        }
        if step <= offset {
            out.push(offset - step);
        }
        step += 1;
    }
    out
}

/// How the quintuplet pool is partitioned and sampled.
#[derive(Debug, Clone)]
pub struct QuintupletConfig {
    /// Neighbours pooled around the target before bucketing.
    pub pool_size: usize,
    /// Distance-ordered buckets the pool is split into.
    pub n_buckets: usize,
    pub seed: u64,
}

impl Default for QuintupletConfig {
    fn default() -> Self {
        Self {
            pool_size: 2000,
            n_buckets: 20,
            seed: 0,
        }
    }
}

/// Ids for the quintuplet loss, drawn from buckets 1, 2, n-1 and n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuintupletIds {
    pub p_plus: u32,
    pub p_plusplus: u32,
    pub n_minusminus: u32,
    pub n_minus: u32,
}

/// The pool of the target's nearest neighbours split into contiguous
/// distance-ordered buckets. Exposed for inspection and tests.
pub fn quintuplet_buckets(
    index: &KdIndex,
    target_id: u32,
    cfg: &QuintupletConfig,
) -> Result<Vec<Vec<u32>>> {
    let available = index.len().saturating_sub(1);
    let needed = cfg.n_buckets * 4;
    if cfg.pool_size < needed || available < cfg.pool_size {
        return Err(Error::PoolTooSmall {
            available,
            needed: cfg.pool_size.max(needed),
        });
    }
    let pool = index.knn(target_id, cfg.pool_size)?;
    let base = cfg.pool_size / cfg.n_buckets;
    let rem = cfg.pool_size % cfg.n_buckets;
    let mut out = Vec::with_capacity(cfg.n_buckets);
    let mut cursor = 0usize;
    for b in 0..cfg.n_buckets {
        let size = base + usize::from(b < rem);
        out.push(pool[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(out)
}

/// Pick one id from each of buckets 1, 2, n-1, n (nearest bucket first).
pub fn pick_quintuplet(
    index: &KdIndex,
    cfg: &QuintupletConfig,
    target_id: u32,
) -> Result<QuintupletIds> {
    let buckets = quintuplet_buckets(index, target_id, cfg)?;
    let nb = buckets.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ u64::from(target_id).wrapping_mul(0x9e3779b97f4a7c15));
    let mut pick = |bucket: &Vec<u32>| bucket[rng.random_range(0..bucket.len())];
    Ok(QuintupletIds {
        p_plus: pick(&buckets[0]),
        p_plusplus: pick(&buckets[1]),
        n_minusminus: pick(&buckets[nb - 2]),
        n_minus: pick(&buckets[nb - 1]),
    })
}

/// A target with its ordered supporting and opposing exemplars.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarSet {
    pub target: u32,
    pub supports: Vec<u32>,
    pub opposes: Vec<u32>,
}

impl ExemplarSet {
    pub fn new(target: u32, supports: Vec<u32>, opposes: Vec<u32>) -> Result<Self> {
        let clash = supports.contains(&target)
            || opposes.contains(&target)
            || supports.iter().any(|s| opposes.contains(s));
        if clash {
            return Err(Error::InvalidArgument {
                op: "ExemplarSet",
                msg: "target, supports and opposes must be disjoint".into(),
            });
        }
        Ok(Self {
            target,
            supports,
            opposes,
        })
    }
}

/// Supports from the k nearest neighbours, opposes from the cluster
/// `offset` ranks away (excluding the supports).
pub fn build_exemplar_set(
    index: &KdIndex,
    ordering: &ClusterOrdering,
    target_id: u32,
    k: usize,
    offset: usize,
    seed: u64,
) -> Result<ExemplarSet> {
    let supports = index.knn(target_id, k)?;
    let opposes = pick_opposing_excluding(ordering, target_id, offset, k, seed, &supports)?;
    ExemplarSet::new(target_id, supports, opposes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_store(rng: &mut impl Rng, n: usize, dim: usize) -> EmbeddingStore {
        let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingStore::new(
            (0..n as u32).collect(),
            Matrix::from_vec(n, dim, data).unwrap(),
        )
        .unwrap()
    }

    /// Exhaustive-scan oracle with identical tie-breaking.
    fn knn_oracle(store: &EmbeddingStore, query: &[f64], k: usize, exclude: Option<u32>) -> Vec<u32> {
        let mut all: Vec<(f64, u32)> = (0..store.len())
            .filter(|&r| Some(store.ids()[r]) != exclude)
            .map(|r| (dist_sq(query, store.row(r)), store.ids()[r]))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, id)| id).collect()
    }

    #[test]
    fn empty_store_errors() {
        let store = EmbeddingStore::new(vec![], Matrix::zeros(0, 3)).unwrap();
        assert!(KdIndex::build(store).is_err());
    }

    #[test]
    fn singleton_is_its_own_nearest_when_self_allowed() {
        let store = EmbeddingStore::new(vec![7], Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap())
            .unwrap();
        let index = KdIndex::build(store).unwrap();
        assert_eq!(index.knn_point(&[1.0, 2.0], 1).unwrap(), vec![7]);
        // Self excluded: no neighbour can be returned.
        assert!(index.knn(7, 1).is_err());
    }

    #[test]
    fn matches_exhaustive_scan_on_large_store() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let store = random_store(&mut rng, 1000, 16);
        let index = KdIndex::build(store.clone()).unwrap();
        for _ in 0..50 {
            let q = rng.random_range(0..1000u32);
            let fast = index.knn(q, 5).unwrap();
            let slow = knn_oracle(&store, store.row(q as usize), 5, Some(q));
            assert_eq!(fast, slow, "query {q}");
        }
    }

    #[test]
    fn duplicated_points_come_back_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut data: Vec<f64> = (0..20 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Make items 4 and 9 exact duplicates of item 0.
        for dup in [4usize, 9] {
            for d in 0..3 {
                data[dup * 3 + d] = data[d];
            }
        }
        let store =
            EmbeddingStore::new((0..20).collect(), Matrix::from_vec(20, 3, data).unwrap()).unwrap();
        let index = KdIndex::build(store).unwrap();
        let got = index.knn(0, 2).unwrap();
        assert_eq!(got, vec![4, 9]);
    }

    #[test]
    fn collinear_middle_query_returns_endpoints() {
        let store = EmbeddingStore::new(
            vec![0, 1, 2],
            Matrix::from_vec(3, 1, vec![0.0, 1.0, 2.0]).unwrap(),
        )
        .unwrap();
        let index = KdIndex::build(store).unwrap();
        let got = index.knn(1, 2).unwrap();
        assert_eq!(got, vec![0, 2]);
    }

    #[test]
    fn k_zero_returns_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let index = KdIndex::build(random_store(&mut rng, 10, 2)).unwrap();
        assert!(index.knn(3, 0).unwrap().is_empty());
    }

    #[test]
    fn k_at_or_above_n_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let index = KdIndex::build(random_store(&mut rng, 10, 2)).unwrap();
        assert!(index.knn(3, 10).is_err());
        assert!(index.knn(3, 9).is_ok());
    }

    #[test]
    fn every_stored_id_is_reachable() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let index = KdIndex::build(random_store(&mut rng, 333, 5)).unwrap();
        assert_eq!(index.reachable_ids(), (0..333u32).collect::<Vec<_>>());
    }

    /// Two Gaussian blobs far apart; returns (store, blob assignment).
    fn two_blob_store(rng: &mut impl Rng, per_blob: usize, dim: usize) -> (EmbeddingStore, Vec<u32>) {
        let mut data = Vec::with_capacity(2 * per_blob * dim);
        let mut blob = Vec::with_capacity(2 * per_blob);
        for b in 0..2 {
            let center = if b == 0 { -10.0 } else { 10.0 };
            for _ in 0..per_blob {
                for _ in 0..dim {
                    data.push(center + rng.random_range(-0.5..0.5));
                }
                blob.push(b as u32);
            }
        }
        let n = 2 * per_blob;
        (
            EmbeddingStore::new((0..n as u32).collect(), Matrix::from_vec(n, dim, data).unwrap())
                .unwrap(),
            blob,
        )
    }

    #[test]
    fn kmeans_recovers_planted_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let (store, blob) = two_blob_store(&mut rng, 50, 4);
        let ordering = cluster_quantize(&store, 2, 9).unwrap();
        // Same-blob items share a cluster, different blobs differ.
        let c0 = ordering.assignment()[0];
        for (row, &b) in blob.iter().enumerate() {
            let expect_same = b == blob[0];
            assert_eq!(ordering.assignment()[row] == c0, expect_same);
        }
    }

    #[test]
    fn kmeans_single_cluster_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let store = random_store(&mut rng, 30, 3);
        let ordering = cluster_quantize(&store, 1, 5).unwrap();
        assert!(ordering.assignment().iter().all(|&c| c == 0));
    }

    #[test]
    fn kmeans_is_deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let store = random_store(&mut rng, 200, 6);
        let a = cluster_quantize(&store, 10, 42).unwrap();
        let b = cluster_quantize(&store, 10, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kmeans_rejects_too_few_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(68);
        let store = random_store(&mut rng, 5, 2);
        assert!(cluster_quantize(&store, 6, 1).is_err());
    }

    #[test]
    fn pick_opposing_offset_zero_stays_home() {
        let mut rng = ChaCha8Rng::seed_from_u64(69);
        let (store, _) = two_blob_store(&mut rng, 30, 3);
        let ordering = cluster_quantize(&store, 2, 3).unwrap();
        let home = ordering.cluster_of(5).unwrap();
        let picks = pick_opposing(&ordering, 5, 0, 4, 11).unwrap();
        for id in picks {
            assert_eq!(ordering.cluster_of(id).unwrap(), home);
            assert_ne!(id, 5);
        }
    }

    #[test]
    fn pick_opposing_offset_one_lands_in_other_blob() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let (store, _) = two_blob_store(&mut rng, 30, 3);
        let ordering = cluster_quantize(&store, 2, 3).unwrap();
        let home = ordering.cluster_of(5).unwrap();
        let picks = pick_opposing(&ordering, 5, 1, 4, 11).unwrap();
        assert_eq!(picks.len(), 4);
        for id in picks {
            assert_ne!(ordering.cluster_of(id).unwrap(), home);
        }
    }

    #[test]
    fn pick_opposing_never_returns_target_and_spills() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let store = random_store(&mut rng, 40, 2);
        let ordering = cluster_quantize(&store, 8, 4).unwrap();
        // Ask for more than any single cluster can hold: spill kicks in.
        let picks = pick_opposing(&ordering, 0, 3, 30, 12).unwrap();
        assert_eq!(picks.len(), 30);
        assert!(!picks.contains(&0));
        let unique: std::collections::HashSet<_> = picks.iter().collect();
        assert_eq!(unique.len(), picks.len());
    }

    #[test]
    fn pick_opposing_errors_with_no_candidates() {
        let store = EmbeddingStore::new(vec![3], Matrix::from_vec(1, 1, vec![0.0]).unwrap())
            .unwrap();
        let ordering = cluster_quantize(&store, 1, 0).unwrap();
        assert!(matches!(
            pick_opposing(&ordering, 3, 0, 1, 0),
            Err(Error::NoEligibleIds)
        ));
    }

    fn line_store(n: usize) -> EmbeddingStore {
        EmbeddingStore::new(
            (0..n as u32).collect(),
            Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn quintuplet_buckets_are_contiguous_on_a_line() {
        // Points 0..=120 on a line, target at 0: the pool is 1..=120 in
        // order, so buckets are consecutive ranges.
        let index = KdIndex::build(line_store(121)).unwrap();
        let cfg = QuintupletConfig {
            pool_size: 120,
            n_buckets: 20,
            seed: 1,
        };
        let buckets = quintuplet_buckets(&index, 0, &cfg).unwrap();
        assert_eq!(buckets.len(), 20);
        let mut expect = 1u32;
        for bucket in &buckets {
            assert_eq!(bucket.len(), 6);
            for &id in bucket {
                assert_eq!(id, expect);
                expect += 1;
            }
        }
    }

    #[test]
    fn quintuplet_orders_near_before_far() {
        let index = KdIndex::build(line_store(121)).unwrap();
        let cfg = QuintupletConfig {
            pool_size: 120,
            n_buckets: 20,
            seed: 2,
        };
        let q = pick_quintuplet(&index, &cfg, 0).unwrap();
        // Strict distance ordering is forced by the bucket layout.
        assert!(q.p_plus < q.p_plusplus);
        assert!(q.p_plusplus < q.n_minusminus);
        assert!(q.n_minusminus < q.n_minus);
        let ids = [q.p_plus, q.p_plusplus, q.n_minusminus, q.n_minus];
        let unique: std::collections::HashSet<_> = ids.iter().collect();
        assert_eq!(unique.len(), 4);
    }

    #[test]
    fn quintuplet_pool_too_small_errors() {
        let index = KdIndex::build(line_store(50)).unwrap();
        let cfg = QuintupletConfig {
            pool_size: 80,
            n_buckets: 20,
            seed: 0,
        };
        assert!(matches!(
            pick_quintuplet(&index, &cfg, 0),
            Err(Error::PoolTooSmall { .. })
        ));
    }

    #[test]
    fn exemplar_set_rejects_overlap() {
        assert!(ExemplarSet::new(1, vec![2, 3], vec![3, 4]).is_err());
        assert!(ExemplarSet::new(1, vec![1], vec![4]).is_err());
        assert!(ExemplarSet::new(1, vec![2], vec![3]).is_ok());
    }

    #[test]
    fn supports_are_closer_than_opposes_on_separated_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        // 20 well-separated blobs so offset >= 10 is meaningful.
        let per = 20;
        let dims = 4;
        let mut data = Vec::new();
        for b in 0..20 {
            let center = (b as f64) * 25.0;
            for _ in 0..per {
                for _ in 0..dims {
                    data.push(center + rng.random_range(-0.5..0.5));
                }
            }
        }
        let n = 20 * per;
        let store =
            EmbeddingStore::new((0..n as u32).collect(), Matrix::from_vec(n, dims, data).unwrap())
                .unwrap();
        let index = KdIndex::build(store.clone()).unwrap();
        let ordering = cluster_quantize(&store, 20, 7).unwrap();
        for target in [0u32, 150, 399] {
            let set = build_exemplar_set(&index, &ordering, target, 3, 10, 99).unwrap();
            let tp = store.row(target as usize);
            let mean = |ids: &[u32]| -> f64 {
                ids.iter()
                    .map(|&id| dist_sq(tp, store.row(id as usize)).sqrt())
                    .sum::<f64>()
                    / ids.len() as f64
            };
            assert!(mean(&set.supports) < mean(&set.opposes));
        }
    }
}
