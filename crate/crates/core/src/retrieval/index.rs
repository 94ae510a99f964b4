use std::cmp::Ordering;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};

use super::{EmbeddingVector, InstanceContext, Split};

pub const DEFAULT_MMR_LAMBDA: f64 = 0.5;
/// Smallest MMR candidate pool; the pool is `max(MIN_POOL, 5 * N)`.
const MIN_POOL: usize = 50;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Higher score first, then lower index.
fn by_score_then_index(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Exact cosine index over training instances.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    backend_id: String,
    dim: usize,
    vectors: Vec<EmbeddingVector>,
    instances: Vec<InstanceContext>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IndexError {
    #[error("cannot build an index from zero instances")]
    Empty,
    #[error("{instances} instances but {vectors} vectors")]
    CountMismatch { instances: usize, vectors: usize },
    #[error("vector {index} has dimension {got}, expected {want}")]
    Dimension { index: usize, got: usize, want: usize },
    #[error("vector {0} has a non-finite entry")]
    NonFinite(usize),
    #[error("instance {0} is not a training instance with a target")]
    NotTraining(usize),
}

impl VectorIndex {
    /// Instances must be training instances carrying targets.
    pub fn build(
        backend_id: impl Into<String>,
        instances: Vec<InstanceContext>,
        vectors: Vec<EmbeddingVector>,
    ) -> Result<Self, IndexError> {
        if instances.is_empty() {
            return Err(IndexError::Empty);
        }
        if instances.len() != vectors.len() {
            return Err(IndexError::CountMismatch {
                instances: instances.len(),
                vectors: vectors.len(),
            });
        }
        let dim = vectors[0].dim();
        for (i, v) in vectors.iter().enumerate() {
            if v.dim() != dim {
                return Err(IndexError::Dimension {
                    index: i,
                    got: v.dim(),
                    want: dim,
                });
            }
            if v.values.iter().any(|x| !x.is_finite()) {
                return Err(IndexError::NonFinite(i));
            }
        }
        for (i, inst) in instances.iter().enumerate() {
            let is_train = inst.provenance.map_or(true, |p| p.split == Split::Train);
            if inst.target.is_none() || !is_train {
                return Err(IndexError::NotTraining(i));
            }
        }
        Ok(Self {
            backend_id: backend_id.into(),
            dim,
            vectors,
            instances,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn instance(&self, i: usize) -> &InstanceContext {
        &self.instances[i]
    }

    pub fn instances(&self) -> &[InstanceContext] {
        &self.instances
    }

    pub fn vector(&self, i: usize) -> &EmbeddingVector {
        &self.vectors[i]
    }

    /// The `k` most cosine-similar instances, best first; ties go to the
    /// lower index.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, cosine(&query.values, &v.values)))
            .collect();
        scored.sort_by(by_score_then_index);
        scored.truncate(k);
        scored
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    /// Selected index positions, in selection order.
    pub items: Vec<usize>,
    pub shot_count: usize,
    /// Set when fewer than `shot_count` candidates were available.
    pub truncated: bool,
}

impl DemonstrationSet {
    pub fn empty() -> Self {
        Self {
            items: Vec::new(),
            shot_count: 0,
            truncated: false,
        }
    }
}

/// Greedy maximal marginal relevance over the top `max(50, 5N)` cosine
/// neighbours of `query`.
///
/// The first pick is the most query-similar candidate; each later pick
/// maximizes `lambda * sim(q, d) - (1 - lambda) * max_s sim(d, s)` over the
/// already-selected `s`. Ties go to the lower index.
pub fn mmr_select(index: &VectorIndex, query: &EmbeddingVector, n: usize, lambda: f64) -> DemonstrationSet {
    assert!((0.0..=1.0).contains(&lambda), "lambda must lie in [0, 1]");
    if n == 0 {
        return DemonstrationSet::empty();
    }
    let pool = index.top_k(query, MIN_POOL.max(5 * n));
    let mut remaining: Vec<(usize, f64)> = pool;
    let mut selected: Vec<usize> = Vec::with_capacity(n);
    // Highest similarity to any selected item, per remaining candidate.
    let mut redundancy: Vec<f64> = vec![f64::NEG_INFINITY; remaining.len()];

    while selected.len() < n && !remaining.is_empty() {
        let score = |pos: usize| {
            let (_, sim) = remaining[pos];
            if selected.is_empty() {
                sim
            } else {
                lambda * sim - (1.0 - lambda) * redundancy[pos]
            }
        };
        let mut best = 0;
        for pos in 1..remaining.len() {
            let (s, b) = (score(pos), score(best));
            if s > b || (s == b && remaining[pos].0 < remaining[best].0) {
                best = pos;
            }
        }
        let (chosen, _) = remaining.swap_remove(best);
        redundancy.swap_remove(best);
        selected.push(chosen);
        let chosen_vec = &index.vector(chosen).values;
        for (pos, (cand, _)) in remaining.iter().enumerate() {
            let sim = cosine(&index.vector(*cand).values, chosen_vec);
            if sim > redundancy[pos] {
                redundancy[pos] = sim;
            }
        }
    }
    DemonstrationSet {
        truncated: selected.len() < n,
        items: selected,
        shot_count: n,
    }
}

/// Index plus a query counter, so callers can check when retrieval was skipped.
#[derive(Debug)]
pub struct Retriever {
    index: VectorIndex,
    lambda: f64,
    queries: AtomicUsize,
}

impl Retriever {
    pub fn new(index: VectorIndex, lambda: f64) -> Self {
        Self {
            index,
            lambda,
            queries: AtomicUsize::new(0),
        }
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn select(&self, query: &EmbeddingVector, n: usize) -> DemonstrationSet {
        self.queries.fetch_add(1, AtomicOrdering::Relaxed);
        mmr_select(&self.index, query, n, self.lambda)
    }

    pub fn query_count(&self) -> usize {
        self.queries.load(AtomicOrdering::Relaxed)
    }
}
