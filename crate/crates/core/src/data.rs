//! Datasets: ratings and KG files, implicit-feedback conversion, per-user
//! splits, evaluation negatives and a planted-preference synthetic generator.
//!
//! Items share the entity id space and occupy its prefix `0..num_items`, so
//! an item id is directly an anchor in the knowledge graph.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{self, KnowledgeGraph, Triple};
use crate::rng::{stream, Role};
use crate::{EntityId, Error, Result};

pub type UserItems = Vec<Vec<EntityId>>;

/// Positives per densified user, with the original user id of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Ratings {
    pub positives: UserItems,
    pub user_ids: Vec<u64>,
    /// One past the largest item id seen in the file.
    pub num_items: usize,
}

/// Reads `user item rating` lines and keeps ratings `>= positive_threshold`.
/// Users without positives are dropped; the rest are renumbered `0..N` in
/// ascending order of their original id.
pub fn load_ratings(path: &Path, positive_threshold: f64) -> Result<Ratings> {
    let file = std::fs::File::open(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let mut by_user: BTreeMap<u64, BTreeSet<EntityId>> = BTreeMap::new();
    let mut num_items = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err("expected `user item rating`".into()));
        }
        let user: u64 = fields[0].parse().map_err(|_| err(format!("bad user id {:?}", fields[0])))?;
        let item: EntityId = fields[1].parse().map_err(|_| err(format!("bad item id {:?}", fields[1])))?;
        let rating: f64 = fields[2].parse().map_err(|_| err(format!("bad rating {:?}", fields[2])))?;
        if !rating.is_finite() {
            return Err(err(format!("bad rating {:?}", fields[2])));
        }
        num_items = num_items.max(item as usize + 1);
        let entry = by_user.entry(user).or_default();
        if rating >= positive_threshold {
            entry.insert(item);
        }
    }
    by_user.retain(|_, items| !items.is_empty());
    if by_user.is_empty() {
        return Err(Error::Dataset(format!("{}: no users with positive feedback", path.display())));
    }
    let user_ids = by_user.keys().copied().collect();
    let positives = by_user.into_values().map(|s| s.into_iter().collect()).collect();
    Ok(Ratings { positives, user_ids, num_items })
}

/// Writes positives as `user item 1` lines using dense user ids.
pub fn save_ratings(path: &Path, positives: &UserItems) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (u, items) in positives.iter().enumerate() {
        for i in items {
            writeln!(w, "{u}\t{i}\t1")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `original dense` per line.
pub fn save_id_map(path: &Path, user_ids: &[u64]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (dense, orig) in user_ids.iter().enumerate() {
        writeln!(w, "{orig}\t{dense}")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: UserItems,
    pub valid: UserItems,
    pub test: UserItems,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Valid,
    Test,
}

/// Randomly partitions each user's positives. Train takes `ceil(r0 * k)`,
/// valid `ceil(r1 * k)` of what is left, test the rest; users with fewer
/// than three positives keep everything in train.
pub fn split<R: Rng + ?Sized>(positives: &UserItems, ratios: [f64; 3], rng: &mut R) -> Result<Splits> {
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let portion = |r: f64, k: usize| ((r * k as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut out = Splits::default();
    for items in positives {
        let mut items = items.clone();
        items.shuffle(rng);
        let k = items.len();
        let (n_train, n_valid) = if k < 3 {
            (k, 0)
        } else {
            let t = portion(ratios[0], k).min(k);
            (t, portion(ratios[1], k).min(k - t))
        };
        let mut train = items[..n_train].to_vec();
        let mut valid = items[n_train..n_train + n_valid].to_vec();
        let mut test = items[n_train + n_valid..].to_vec();
        train.sort_unstable();
        valid.sort_unstable();
        test.sort_unstable();
        out.train.push(train);
        out.valid.push(valid);
        out.test.push(test);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalNegatives {
    pub valid: UserItems,
    pub test: UserItems,
}

/// For each user and held-out split, as many unobserved items as that
/// split has positives (fewer if the user has seen almost everything).
pub fn sample_eval_negatives<R: Rng + ?Sized>(positives: &UserItems, splits: &Splits, num_items: usize, rng: &mut R) -> EvalNegatives {
    let mut out = EvalNegatives::default();
    for (u, pos) in positives.iter().enumerate() {
        let seen: BTreeSet<EntityId> = pos.iter().copied().collect();
        let pool: Vec<EntityId> = (0..num_items as EntityId).filter(|i| !seen.contains(i)).collect();
        let mut draw = |n: usize| -> Vec<EntityId> {
            let n = n.min(pool.len());
            let mut v: Vec<EntityId> = index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
            v.sort_unstable();
            v
        };
        out.valid.push(draw(splits.valid[u].len()));
        out.test.push(draw(splits.test[u].len()));
    }
    out
}

/// Everything the simulator needs, fully materialised.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub num_users: usize,
    pub num_items: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    /// All positives per user, sorted.
    pub positives: UserItems,
    pub splits: Splits,
    pub negatives: EvalNegatives,
    pub triples: Vec<Triple>,
    pub kg: KnowledgeGraph,
}

impl Dataset {
    /// Splits 6:2:2, samples evaluation negatives and indexes the KG. Both
    /// random steps draw from streams of `seed`.
    pub fn assemble(
        positives: UserItems,
        triples: Vec<Triple>,
        num_items: usize,
        num_entities: usize,
        num_relations: usize,
        seed: u64,
    ) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::Dataset("no users".into()));
        }
        if num_items > num_entities {
            return Err(Error::Dataset(format!("{num_items} items but only {num_entities} entities")));
        }
        if let Some(bad) = positives.iter().flatten().find(|&&i| i as usize >= num_items) {
            return Err(Error::Dataset(format!("item {bad} outside the item range 0..{num_items}")));
        }
        let kg = KnowledgeGraph::build(&triples, num_entities, num_relations.max(1))?;
        let splits = split(&positives, [0.6, 0.2, 0.2], &mut stream(seed, Role::Split, 0, 0))?;
        let negatives = sample_eval_negatives(&positives, &splits, num_items, &mut stream(seed, Role::EvalNegatives, 0, 0));
        Ok(Self {
            num_users: positives.len(),
            num_items,
            num_entities,
            num_relations: num_relations.max(1),
            positives,
            splits,
            negatives,
            triples,
            kg,
        })
    }

    /// Loads a ratings file and a KG file. Entity and relation counts are
    /// inferred from the largest ids present.
    pub fn from_files(ratings: &Path, kg_file: &Path, positive_threshold: f64, seed: u64) -> Result<(Self, Vec<u64>)> {
        let r = load_ratings(ratings, positive_threshold)?;
        let triples = kg::read_triples(kg_file)?;
        let max_entity = triples.iter().map(|t| t.head.max(t.tail) as usize + 1).max().unwrap_or(0);
        let num_relations = triples.iter().map(|t| t.relation as usize + 1).max().unwrap_or(1);
        let num_entities = max_entity.max(r.num_items);
        let ds = Self::assemble(r.positives, triples, r.num_items, num_entities, num_relations, seed)?;
        Ok((ds, r.user_ids))
    }

    pub fn held_out(&self, split: Split) -> (&UserItems, &UserItems) {
        match split {
            Split::Valid => (&self.splits.valid, &self.negatives.valid),
            Split::Test => (&self.splits.test, &self.negatives.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub attributes: usize,
    pub relations: usize,
    pub interactions_per_user: usize,
    pub preferred_per_user: usize,
    /// Probability that an interaction ignores the user's preferences.
    pub noise: f64,
    /// Extra item–attribute triples with random endpoints.
    pub extra_triples: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 500,
            items: 200,
            attributes: 20,
            relations: 2,
            interactions_per_user: 10,
            preferred_per_user: 2,
            noise: 0.1,
            extra_triples: 0,
        }
    }
}

/// Planted-preference data plus the ground truth that generated it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub config: SynthConfig,
    pub positives: UserItems,
    pub triples: Vec<Triple>,
    /// Attribute index (not entity id) of each item.
    pub item_attribute: Vec<u32>,
    pub preferences: Vec<BTreeSet<u32>>,
}

impl Synthetic {
    pub fn num_entities(&self) -> usize {
        self.config.items + self.config.attributes
    }

    pub fn attribute_entity(&self, attribute: u32) -> EntityId {
        self.config.items as EntityId + attribute
    }

    pub fn into_dataset(self, seed: u64) -> Result<Dataset> {
        let n_ent = self.num_entities();
        Dataset::assemble(self.positives, self.triples, self.config.items, n_ent, self.config.relations, seed)
    }
}

/// Items are spread evenly over attributes; attribute `a` hangs off its items
/// through relation `a mod relations`. Each user prefers
/// `preferred_per_user` attributes and draws each interaction from items
/// with a preferred attribute with probability `1 - noise`, uniformly otherwise.
pub fn generate_synthetic<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<Synthetic> {
    if cfg.users == 0 || cfg.items == 0 || cfg.attributes == 0 || cfg.relations == 0 {
        return Err(Error::Config("synthetic counts must be at least 1".into()));
    }
    if cfg.preferred_per_user == 0 || cfg.preferred_per_user > cfg.attributes {
        return Err(Error::Config("preferred_per_user must lie in 1..=attributes".into()));
    }
    if cfg.interactions_per_user == 0 || cfg.interactions_per_user > cfg.items {
        return Err(Error::Config("interactions_per_user must lie in 1..=items".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::Config("noise must lie in [0, 1]".into()));
    }

    let mut slots: Vec<u32> = (0..cfg.items).map(|i| (i % cfg.attributes) as u32).collect();
    slots.shuffle(rng);
    let item_attribute = slots;
    let rel_of = |a: u32| a % cfg.relations as u32;
    let attr_entity = |a: u32| cfg.items as EntityId + a;

    let mut triples: Vec<Triple> = item_attribute
        .iter()
        .enumerate()
        .map(|(i, &a)| Triple::new(i as EntityId, rel_of(a), attr_entity(a)))
        .collect();
    for _ in 0..cfg.extra_triples {
        let a = rng.gen_range(0..cfg.attributes as u32);
        triples.push(Triple::new(rng.gen_range(0..cfg.items as EntityId), rel_of(a), attr_entity(a)));
    }

    let mut by_attribute: Vec<Vec<EntityId>> = vec![Vec::new(); cfg.attributes];
    for (i, &a) in item_attribute.iter().enumerate() {
        by_attribute[a as usize].push(i as EntityId);
    }

    let mut preferences = Vec::with_capacity(cfg.users);
    let mut positives = Vec::with_capacity(cfg.users);
    for _ in 0..cfg.users {
        let prefs: BTreeSet<u32> = index::sample(rng, cfg.attributes, cfg.preferred_per_user)
            .into_iter()
            .map(|a| a as u32)
            .collect();
        let liked: Vec<EntityId> = prefs.iter().flat_map(|&a| by_attribute[a as usize].iter().copied()).collect();
        let mut chosen = BTreeSet::new();
        while chosen.len() < cfg.interactions_per_user {
            let from_liked = !rng.gen_bool(cfg.noise);
            let remaining_liked: Vec<EntityId> = liked.iter().copied().filter(|i| !chosen.contains(i)).collect();
            let item = if from_liked && !remaining_liked.is_empty() {
                *remaining_liked.choose(rng).unwrap()
            } else {
                loop {
                    let i = rng.gen_range(0..cfg.items as EntityId);
                    if !chosen.contains(&i) {
                        break i;
                    }
                }
            };
            chosen.insert(item);
        }
        preferences.push(prefs);
        positives.push(chosen.into_iter().collect());
    }
    Ok(Synthetic { config: cfg.clone(), positives, triples, item_attribute, preferences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn movielens_threshold_keeps_four_and_five() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.txt", "10 0 3\n10 1 4\n10 2 5\n20 0 3.5\n");
        let r = load_ratings(&p, 4.0).unwrap();
        assert_eq!(r.positives, vec![vec![1, 2]]);
        assert_eq!(r.user_ids, vec![10]);
        assert_eq!(r.num_items, 3);
    }

    #[test]
    fn zero_threshold_keeps_every_rating() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.txt", "5 3 0\n5 1 7\n2 0 1\n");
        let r = load_ratings(&p, 0.0).unwrap();
        assert_eq!(r.positives, vec![vec![0], vec![1, 3]]);
        assert_eq!(r.user_ids, vec![2, 5]);
    }

    #[test]
    fn empty_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_ratings(&write(&dir, "e.txt", ""), 0.0), Err(Error::Dataset(_))));
        match load_ratings(&write(&dir, "m.txt", "1 2 3\n1 two 3\n"), 0.0) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(load_ratings(&dir.path().join("missing.txt"), 0.0).is_err());
    }

    #[test]
    fn ratings_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.txt", "7 3 1\n7 4 1\n9 0 1\n");
        let first = load_ratings(&p, 0.0).unwrap();
        let q = dir.path().join("again.txt");
        save_ratings(&q, &first.positives).unwrap();
        let second = load_ratings(&q, 0.0).unwrap();
        assert_eq!(second.positives, first.positives);
        save_id_map(&dir.path().join("ids.txt"), &first.user_ids).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("ids.txt")).unwrap(), "7\t0\n9\t1\n");
    }

    #[test]
    fn split_sizes() {
        let mut rng = SimRng::seed_from_u64(0);
        let s = split(&vec![(0..10).collect(), vec![4], (0..3).collect()], [0.6, 0.2, 0.2], &mut rng).unwrap();
        assert_eq!((s.train[0].len(), s.valid[0].len(), s.test[0].len()), (6, 2, 2));
        assert_eq!((s.train[1].len(), s.valid[1].len(), s.test[1].len()), (1, 0, 0));
        assert_eq!((s.train[2].len(), s.valid[2].len(), s.test[2].len()), (2, 1, 0));
        assert!(split(&vec![vec![1]], [0.5, 0.2, 0.2], &mut rng).is_err());
    }

    #[test]
    fn split_is_reproducible() {
        let pos: UserItems = vec![(0..20).collect(), (5..17).collect()];
        let a = split(&pos, [0.6, 0.2, 0.2], &mut SimRng::seed_from_u64(4)).unwrap();
        let b = split(&pos, [0.6, 0.2, 0.2], &mut SimRng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn split_partitions_each_user(
            users in proptest::collection::vec(proptest::collection::btree_set(0u32..60, 1..25), 1..8),
            seed in any::<u64>(),
        ) {
            let pos: UserItems = users.iter().map(|s| s.iter().copied().collect()).collect();
            let s = split(&pos, [0.6, 0.2, 0.2], &mut SimRng::seed_from_u64(seed)).unwrap();
            for (u, items) in pos.iter().enumerate() {
                let mut all: Vec<u32> = s.train[u].iter().chain(&s.valid[u]).chain(&s.test[u]).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(&all, items);
            }
        }
    }

    #[test]
    fn eval_negatives_match_positive_counts() {
        let pos: UserItems = vec![(0..20).collect(), vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9]];
        let s = split(&pos, [0.6, 0.2, 0.2], &mut SimRng::seed_from_u64(1)).unwrap();
        let a = sample_eval_negatives(&pos, &s, 30, &mut SimRng::seed_from_u64(2));
        let b = sample_eval_negatives(&pos, &s, 30, &mut SimRng::seed_from_u64(2));
        assert_eq!(a, b);
        for u in 0..2 {
            assert_eq!(a.test[u].len(), s.test[u].len());
            assert_eq!(a.valid[u].len(), s.valid[u].len());
            assert!(a.test[u].iter().chain(&a.valid[u]).all(|i| !pos[u].contains(i)));
        }
        // only 2 unobserved items left for a user with 8 positives out of 10
        let pos: UserItems = vec![(0..8).collect()];
        let s = Splits { train: vec![vec![]], valid: vec![vec![]], test: vec![(0..4).collect()] };
        let n = sample_eval_negatives(&pos, &s, 10, &mut SimRng::seed_from_u64(0));
        assert_eq!(n.test[0], vec![8, 9]);
    }

    #[test]
    fn synthetic_default_counts() {
        let syn = generate_synthetic(&SynthConfig::default(), &mut SimRng::seed_from_u64(0)).unwrap();
        assert_eq!(syn.triples.len(), 200);
        assert_eq!(syn.num_entities(), 220);
        assert!(syn.positives.iter().all(|p| p.len() == 10));
        let ds = syn.into_dataset(0).unwrap();
        assert_eq!(ds.kg.num_triples(), 200);
        assert_eq!(ds.num_relations, 2);
    }

    #[test]
    fn noiseless_positives_follow_preferences() {
        let cfg = SynthConfig { noise: 0.0, ..SynthConfig::default() };
        let syn = generate_synthetic(&cfg, &mut SimRng::seed_from_u64(3)).unwrap();
        for (u, items) in syn.positives.iter().enumerate() {
            for &i in items {
                assert!(syn.preferences[u].contains(&syn.item_attribute[i as usize]));
            }
        }
    }

    #[test]
    fn dataset_rejects_items_outside_range() {
        assert!(Dataset::assemble(vec![vec![5]], vec![], 3, 10, 1, 0).is_err());
        assert!(Dataset::assemble(vec![], vec![], 3, 10, 1, 0).is_err());
    }
}
