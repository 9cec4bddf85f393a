//! Taxonomy graph ingestion and structural statistics: BFS depths,
//! distinct-descendant counts, orbital radii, attach-to-seed splitting,
//! negative sampling, and lowest-common-ancestor queries.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{CoreError, Result};

/// Immutable taxonomy over opaque node ids. Edges point child -> parent;
/// multi-parent nodes are allowed (DAG), cycles are rejected at load.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    ids: Vec<String>,
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    roots: Vec<usize>,
    depth: Vec<usize>,
    n_desc: Vec<usize>,
    /// Elementary operations spent computing depths and descendant counts
    /// (exposed so tests can assert linear scaling).
    pub structural_ops: usize,
}

/// Per-node raw radii and normalized orbital potentials.
#[derive(Debug, Clone)]
pub struct RadiusMap {
    pub r_raw: Vec<f64>,
    pub r: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
    /// True when r = 1 - normalized(R_raw) (the default orientation).
    pub inverted: bool,
}

impl RadiusMap {
    /// The mirrored orientation r -> 1 - r. Rankings depend on radii only
    /// through |delta r|, so this must leave inference unchanged.
    pub fn flip_orientation(&self) -> RadiusMap {
        RadiusMap {
            r_raw: self.r_raw.clone(),
            r: self.r.iter().map(|&x| 1.0 - x).collect(),
            r_min: self.r_min,
            r_max: self.r_max,
            inverted: !self.inverted,
        }
    }
}

/// Id-level triplet produced by negative sampling; features are joined later.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdTriplet {
    pub child: String,
    pub parent: String,
    pub negative: String,
}

/// One held-out query and its gold parents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub gold_parents: Vec<String>,
}

impl Taxonomy {
    /// Builds a taxonomy from (child_id, parent_id) records. When
    /// `declared` is given, edge endpoints must come from it and isolated
    /// declared ids become extra roots; otherwise the node set is the union
    /// of the edge endpoints.
    pub fn from_edges(
        edges: &[(String, String)],
        declared: Option<&BTreeSet<String>>,
    ) -> Result<Self> {
        let mut id_set: BTreeSet<String> = BTreeSet::new();
        match declared {
            Some(decl) => {
                for (c, p) in edges {
                    for id in [c, p] {
                        if !decl.contains(id) {
                            return Err(CoreError::UnknownNode(id.clone()));
                        }
                    }
                }
                id_set.extend(decl.iter().cloned());
            }
            None => {
                for (c, p) in edges {
                    id_set.insert(c.clone());
                    id_set.insert(p.clone());
                }
            }
        }
        if id_set.is_empty() {
            return Err(CoreError::InvalidParameter("empty taxonomy".into()));
        }
        let ids: Vec<String> = id_set.into_iter().collect();
        let index: BTreeMap<String, usize> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let n = ids.len();
        let mut parents: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        let mut children: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (c, p) in edges {
            let ci = index[c];
            let pi = index[p];
            if ci == pi {
                return Err(CoreError::CyclicInput);
            }
            parents[ci].insert(pi);
            children[pi].insert(ci);
        }
        let parents: Vec<Vec<usize>> = parents.into_iter().map(|s| s.into_iter().collect()).collect();
        let children: Vec<Vec<usize>> =
            children.into_iter().map(|s| s.into_iter().collect()).collect();
        let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_empty()).collect();
        if roots.is_empty() {
            return Err(CoreError::CyclicInput);
        }

        let mut ops = 0usize;

        // Kahn topological order from roots downward (parent before child);
        // leftovers indicate a cycle.
        let mut remaining: Vec<usize> = parents.iter().map(|p| p.len()).collect();
        let mut queue: VecDeque<usize> = roots.iter().copied().collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(u) = queue.pop_front() {
            ops += 1;
            topo.push(u);
            for &c in &children[u] {
                ops += 1;
                remaining[c] -= 1;
                if remaining[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if topo.len() != n {
            return Err(CoreError::CyclicInput);
        }

        // BFS depths: shortest hop count from any root.
        let mut depth = vec![usize::MAX; n];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &r in &roots {
            depth[r] = 0;
            queue.push_back(r);
        }
        while let Some(u) = queue.pop_front() {
            ops += 1;
            for &c in &children[u] {
                ops += 1;
                if depth[c] == usize::MAX {
                    depth[c] = depth[u] + 1;
                    queue.push_back(c);
                }
            }
        }

        // Distinct descendant counts. Trees get the single reverse
        // topological aggregation pass (subtree size - 1); DAGs need set
        // semantics, realized with bitsets.
        let is_tree = parents.iter().all(|p| p.len() <= 1);
        let mut n_desc = vec![0usize; n];
        if is_tree {
            for &u in topo.iter().rev() {
                ops += 1;
                let mut total = 0;
                for &c in &children[u] {
                    ops += 1;
                    total += 1 + n_desc[c];
                }
                n_desc[u] = total;
            }
        } else {
            let words = n.div_ceil(64);
            let mut sets: Vec<Vec<u64>> = vec![vec![0u64; words]; n];
            for &u in topo.iter().rev() {
                let mut acc = vec![0u64; words];
                for &c in &children[u] {
                    acc[c / 64] |= 1 << (c % 64);
                    for (a, s) in acc.iter_mut().zip(&sets[c]) {
                        *a |= *s;
                    }
                }
                n_desc[u] = acc.iter().map(|w| w.count_ones() as usize).sum();
                sets[u] = acc;
            }
        }

        let names = ids.clone();
        Ok(Taxonomy {
            ids,
            names,
            index,
            parents,
            children,
            roots,
            depth,
            n_desc,
            structural_ops: ops,
        })
    }

    /// Attaches display names from (id, name) records; unknown ids error.
    pub fn with_names(mut self, names: &[(String, String)]) -> Result<Self> {
        for (id, name) in names {
            match self.index.get(id) {
                Some(&i) => self.names[i] = name.clone(),
                None => return Err(CoreError::UnknownNode(id.clone())),
            }
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| CoreError::UnknownNode(id.to_string()))
    }

    pub fn parents_of(&self, idx: usize) -> &[usize] {
        &self.parents[idx]
    }

    pub fn children_of(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn depth(&self, idx: usize) -> usize {
        self.depth[idx]
    }

    pub fn n_desc(&self, idx: usize) -> usize {
        self.n_desc[idx]
    }

    pub fn is_leaf(&self, idx: usize) -> bool {
        self.children[idx].is_empty()
    }

    /// All (child_id, parent_id) records, in deterministic order.
    pub fn edge_records(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for c in 0..self.len() {
            for &p in &self.parents[c] {
                out.push((self.ids[c].clone(), self.ids[p].clone()));
            }
        }
        out
    }

    /// Ancestor indices of `idx`, including itself.
    fn ancestors(&self, idx: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![idx];
        while let Some(u) = stack.pop() {
            if seen.insert(u) {
                stack.extend(self.parents[u].iter().copied());
            }
        }
        seen
    }
}

/// Raw radius R_raw = 1 + D + log2(1 + N_desc) and its normalized,
/// inverted potential r = 1 - (R_raw - R_min)/(R_max - R_min).
pub fn compute_radii(t: &Taxonomy) -> RadiusMap {
    let r_raw: Vec<f64> = (0..t.len())
        .map(|i| 1.0 + t.depth(i) as f64 + (1.0 + t.n_desc(i) as f64).log2())
        .collect();
    let r_min = r_raw.iter().copied().fold(f64::INFINITY, f64::min);
    let r_max = r_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let r = if (r_max - r_min).abs() < 1e-12 {
        // Degenerate flat hierarchy: the gate reduces to cosine ranking.
        vec![1.0; t.len()]
    } else {
        r_raw
            .iter()
            .map(|&x| 1.0 - (x - r_min) / (r_max - r_min))
            .collect()
    };
    RadiusMap {
        r_raw,
        r,
        r_min,
        r_max,
        inverted: true,
    }
}

/// Withholds a fraction of leaves as attachment queries and returns the
/// remaining seed taxonomy. Optionally drops a further fraction of the
/// seed's internal edges.
pub fn split_leaves(
    t: &Taxonomy,
    test_frac: f64,
    seed: u64,
    drop_edge_frac: f64,
) -> Result<(Taxonomy, Vec<Query>)> {
    if !(0.0..1.0).contains(&test_frac) || test_frac <= 0.0 {
        return Err(CoreError::InvalidSplit(format!(
            "test fraction must be in (0,1), got {test_frac}"
        )));
    }
    if !(0.0..1.0).contains(&drop_edge_frac) {
        return Err(CoreError::InvalidSplit(format!(
            "drop-edge fraction must be in [0,1), got {drop_edge_frac}"
        )));
    }
    let leaves: Vec<usize> = (0..t.len()).filter(|&i| t.is_leaf(i)).collect();
    let n_queries = ((leaves.len() as f64) * test_frac).round() as usize;
    if n_queries == 0 {
        return Err(CoreError::InvalidSplit(
            "test fraction selects no leaves".into(),
        ));
    }
    if n_queries >= leaves.len() {
        return Err(CoreError::InvalidSplit(
            "test fraction would withhold every leaf".into(),
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pool = leaves.clone();
    pool.shuffle(&mut rng);
    let mut withheld: BTreeSet<usize> = pool[..n_queries].iter().copied().collect();
    // A withheld leaf whose every gold parent is also withheld would have no
    // gold in the seed. Leaves have no children, so parents are never
    // leaves and this cannot trigger; the guard covers degenerate graphs.
    for &q in withheld.clone().iter() {
        if t.parents_of(q).iter().all(|p| withheld.contains(p)) && !t.parents_of(q).is_empty() {
            withheld.remove(&q);
        }
    }
    let queries: Vec<Query> = withheld
        .iter()
        .map(|&q| Query {
            id: t.ids()[q].clone(),
            gold_parents: t
                .parents_of(q)
                .iter()
                .map(|&p| t.ids()[p].clone())
                .collect(),
        })
        .collect();
    if queries.iter().any(|q| q.gold_parents.is_empty()) {
        return Err(CoreError::InvalidSplit(
            "a withheld leaf has no parent to use as gold".into(),
        ));
    }

    let mut seed_edges: Vec<(String, String)> = t
        .edge_records()
        .into_iter()
        .filter(|(c, p)| {
            !withheld.contains(&t.index_of(c).unwrap()) && !withheld.contains(&t.index_of(p).unwrap())
        })
        .collect();
    if drop_edge_frac > 0.0 {
        let n_drop = ((seed_edges.len() as f64) * drop_edge_frac).round() as usize;
        let mut order: Vec<usize> = (0..seed_edges.len()).collect();
        order.shuffle(&mut rng);
        let dropped: BTreeSet<usize> = order[..n_drop].iter().copied().collect();
        seed_edges = seed_edges
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !dropped.contains(i))
            .map(|(_, e)| e)
            .collect();
    }
    let seed_ids: BTreeSet<String> = t
        .ids()
        .iter()
        .enumerate()
        .filter(|(i, _)| !withheld.contains(i))
        .map(|(_, id)| id.clone())
        .collect();
    let seed_tax = Taxonomy::from_edges(&seed_edges, Some(&seed_ids))?;
    Ok((seed_tax, queries))
}

/// For every (parent, child) edge draws `n_neg` negatives uniformly from
/// nodes that are neither the child nor one of its parents. Returns the
/// triplets and the number of edges skipped for lack of candidates.
pub fn sample_triplets<R: Rng>(
    t: &Taxonomy,
    n_neg: usize,
    rng: &mut R,
) -> Result<(Vec<IdTriplet>, usize)> {
    if n_neg == 0 {
        return Err(CoreError::InvalidParameter(
            "need at least one negative per edge".into(),
        ));
    }
    let mut out = Vec::new();
    let mut skipped = 0usize;
    let mut any_edge = false;
    for c in 0..t.len() {
        let excluded: BTreeSet<usize> = t
            .parents_of(c)
            .iter()
            .copied()
            .chain(std::iter::once(c))
            .collect();
        let candidates: Vec<usize> = (0..t.len()).filter(|i| !excluded.contains(i)).collect();
        for &p in t.parents_of(c) {
            any_edge = true;
            if candidates.is_empty() {
                skipped += 1;
                continue;
            }
            for _ in 0..n_neg {
                let neg = candidates[rng.gen_range(0..candidates.len())];
                out.push(IdTriplet {
                    child: t.ids()[c].clone(),
                    parent: t.ids()[p].clone(),
                    negative: t.ids()[neg].clone(),
                });
            }
        }
    }
    if !any_edge {
        return Err(CoreError::InvalidParameter("taxonomy has no edges".into()));
    }
    Ok((out, skipped))
}

/// Lowest common ancestor: the deepest common ancestor, ties broken by
/// lexicographically smaller id.
pub fn lca(t: &Taxonomy, a: &str, b: &str) -> Result<String> {
    let ai = t.index_of(a)?;
    let bi = t.index_of(b)?;
    let aa = t.ancestors(ai);
    let ba = t.ancestors(bi);
    let common: Vec<usize> = aa.intersection(&ba).copied().collect();
    if common.is_empty() {
        return Err(CoreError::NoCommonAncestor);
    }
    let best = common
        .into_iter()
        .min_by(|&x, &y| {
            t.depth(y)
                .cmp(&t.depth(x))
                .then_with(|| t.ids()[x].cmp(&t.ids()[y]))
        })
        .unwrap();
    Ok(t.ids()[best].clone())
}

use rand::SeedableRng;
