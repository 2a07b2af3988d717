//! Exact nearest-neighbour retrieval over catalogue tools.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::catalogue::{Catalogue, Tool};
use crate::embed::{dot, EmbedError, Embedder};
use crate::seeds;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("unknown seed tool `{0}`")]
    UnknownSeed(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Text that represents a tool to the encoder: name, description, then one
/// `param: description` line per parameter in catalogue order.
pub fn tool_text(tool: &Tool) -> String {
    let mut out = format!("{}\n{}", tool.name, tool.description);
    for (name, spec) in &tool.params {
        out.push('\n');
        out.push_str(name);
        out.push_str(": ");
        out.push_str(&spec.description);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTool {
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorSet {
    pub seed: String,
    pub members: Vec<ScoredTool>,
}

impl DistractorSet {
    pub fn names(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.name.as_str()).collect()
    }
}

/// Order by descending score, ties by ascending name.
fn rank(hits: &mut [ScoredTool]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
}

/// Tool vectors for one catalogue, computed once.
pub struct ToolIndex {
    names: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl ToolIndex {
    pub fn build(cat: &Catalogue, emb: &dyn Embedder) -> Result<Self, EmbedError> {
        let mut names = Vec::with_capacity(cat.len());
        let mut vectors = Vec::with_capacity(cat.len());
        for tool in cat.iter() {
            names.push(tool.name.clone());
            vectors.push(emb.embed(&tool_text(tool))?);
        }
        Ok(Self { names, vectors })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Top `k` tools by inner product with `query`, excluding `exclude` if given.
    pub fn search(&self, query: &[f64], k: usize, exclude: Option<&str>) -> Vec<ScoredTool> {
        let mut hits: Vec<ScoredTool> = self
            .names
            .iter()
            .zip(&self.vectors)
            .filter(|(name, _)| Some(name.as_str()) != exclude)
            .map(|(name, v)| ScoredTool { name: name.clone(), score: dot(query, v) })
            .collect();
        rank(&mut hits);
        hits.truncate(k);
        hits
    }

    pub fn nearest_distractors(&self, seed: &str, k: usize) -> Result<DistractorSet, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let pos = self
            .names
            .iter()
            .position(|n| n == seed)
            .ok_or_else(|| RetrievalError::UnknownSeed(seed.to_string()))?;
        Ok(DistractorSet {
            seed: seed.to_string(),
            members: self.search(&self.vectors[pos], k, Some(seed)),
        })
    }
}

/// One-shot form: embeds the whole catalogue and returns the `k` tools closest to `seed`.
pub fn nearest_distractors(
    cat: &Catalogue,
    seed: &str,
    k: usize,
    emb: &dyn Embedder,
) -> Result<DistractorSet, RetrievalError> {
    if cat.get(seed).is_none() {
        return Err(RetrievalError::UnknownSeed(seed.to_string()));
    }
    ToolIndex::build(cat, emb)?.nearest_distractors(seed, k)
}

/// Seed plus distractors in a shuffled presentation order determined by `rng_seed`.
pub fn candidate_pool(seed: &str, d: &DistractorSet, rng_seed: u64) -> Vec<String> {
    debug_assert_eq!(d.seed, seed);
    let mut pool: Vec<String> = std::iter::once(seed.to_string())
        .chain(d.members.iter().map(|m| m.name.clone()))
        .collect();
    pool.shuffle(&mut seeds::rng(rng_seed));
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalogue::{ParamSpec, ParamType};
    use crate::embed::HashEmbedder;

    fn tool(name: &str, desc: &str) -> Tool {
        Tool::new(name, desc)
    }

    #[test]
    fn tool_text_layout() {
        let t = tool("A", "B").with_param("p", ParamSpec::new(ParamType::String, "C", true));
        assert_eq!(tool_text(&t), "A\nB\np: C");
        assert_eq!(tool_text(&tool("A", "B")), "A\nB");
    }

    #[test]
    fn textual_twin_ranks_first() {
        let cat = Catalogue::from_tools(vec![
            tool("seed", "track shipment status for freight"),
            tool("other", "create invoice for customer"),
            tool("twin", "track shipment status for freight"),
            tool("near", "track freight"),
        ])
        .unwrap();
        let d = nearest_distractors(&cat, "seed", 10, &HashEmbedder::default()).unwrap();
        assert_eq!(d.members.len(), 3);
        assert!(d.names().iter().all(|n| *n != "seed"));
        // The twin differs only by name token, so it beats every other tool.
        assert_eq!(d.members[0].name, "twin");
        assert!(d.members.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn unknown_seed_and_zero_k() {
        let cat = Catalogue::from_tools(vec![tool("a", "x")]).unwrap();
        let emb = HashEmbedder::default();
        assert!(matches!(
            nearest_distractors(&cat, "b", 1, &emb),
            Err(RetrievalError::UnknownSeed(_))
        ));
        assert!(matches!(nearest_distractors(&cat, "a", 0, &emb), Err(RetrievalError::ZeroK)));
        assert!(nearest_distractors(&cat, "a", 5, &emb).unwrap().members.is_empty());
    }

    #[test]
    fn ties_break_by_name() {
        let cat = Catalogue::from_tools(vec![
            tool("s", "alpha"),
            tool("c", "beta"),
            tool("b", "beta"),
            tool("a", "beta"),
        ])
        .unwrap();
        let d = nearest_distractors(&cat, "s", 2, &HashEmbedder::default()).unwrap();
        assert_eq!(d.names(), vec!["a", "b"]);
    }

    #[test]
    fn pool_is_deterministic_and_gold_position_roughly_uniform() {
        let d = DistractorSet {
            seed: "s".into(),
            members: vec![
                ScoredTool { name: "a".into(), score: 0.9 },
                ScoredTool { name: "b".into(), score: 0.8 },
            ],
        };
        assert_eq!(candidate_pool("s", &d, 7), candidate_pool("s", &d, 7));
        let mut counts = [0usize; 3];
        for seed in 0..1000 {
            let pool = candidate_pool("s", &d, seed);
            assert_eq!(pool.len(), 3);
            counts[pool.iter().position(|n| n == "s").unwrap()] += 1;
        }
        let expected = 1000.0 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 2 degrees of freedom, p = 0.001 critical value.
        assert!(chi2 < 13.82, "chi2 {chi2} counts {counts:?}");
    }
}
