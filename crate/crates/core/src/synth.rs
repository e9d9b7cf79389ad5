//! Synthetic composition-rule graphs: every `rq` fact is witnessed by
//! a two-hop `r1`/`r2` path whose edges always land in train, so rule
//! facts held out for evaluation stay derivable from the train graph.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TrainRng;

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub entities: usize,
    /// Distinct (x, y) pairs related by the composed relation.
    pub rule_facts: usize,
    pub noise_relations: usize,
    pub noise_facts: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SynthOptions {
    pub fn desk(entities: usize, rule_facts: usize, seed: u64) -> Self {
        SynthOptions {
            entities,
            rule_facts,
            noise_relations: 2,
            noise_facts: rule_facts,
            valid_fraction: 0.1,
            test_fraction: 0.2,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.entities < 20 {
            return Err(Error::Generation(format!(
                "need at least 20 entities, got {}",
                self.entities
            )));
        }
        if self.rule_facts == 0 {
            return Err(Error::Generation("no rule facts requested".into()));
        }
        let pairs = self.entities * (self.entities - 1);
        if self.rule_facts > pairs {
            return Err(Error::Generation(format!(
                "{} rule facts cannot fit {} ordered pairs",
                self.rule_facts, pairs
            )));
        }
        if self.valid_fraction < 0.0
            || self.test_fraction < 0.0
            || self.valid_fraction + self.test_fraction >= 1.0
        {
            return Err(Error::Generation(format!(
                "split fractions {}/{} must be nonnegative and leave room for train",
                self.valid_fraction, self.test_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SynthSummary {
    pub entities: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

fn ent(i: usize) -> String {
    format!("e{i:03}")
}

fn split_count(total: usize, fraction: f64, label: &str) -> Result<usize> {
    let count = (total as f64 * fraction).round() as usize;
    if fraction > 0.0 && count == 0 {
        return Err(Error::Generation(format!(
            "{label} fraction {fraction} rounds to zero facts out of {total}"
        )));
    }
    Ok(count)
}

/// Writes train/valid/test TSVs under `dir`. The composed relation is
/// `rq`; its witnesses use `r1` then `r2`. Every witness cluster also
/// carries two decoy chains with their own midpoints ending at the
/// witness terminal, plus decoy `r2` edges from the true midpoint, so
/// path shape alone never singles out the true pair; `n{i}` relations
/// carry distractor edges into shared sink entities. Only `rq` facts
/// are split; witness, decoy, and noise edges are train-only. Every
/// entity index appears in train.
pub fn generate_synthetic_kg(dir: &Path, opts: &SynthOptions) -> Result<SynthSummary> {
    opts.validate()?;
    let mut rng = TrainRng::seed_from_u64(opts.seed);
    let n = opts.entities;

    let sink_count = if opts.noise_relations > 0 {
        (n / 50).clamp(2, 8).min(n.saturating_sub(3))
    } else {
        0
    };

    let mut rule: Vec<(usize, usize)> = Vec::new();
    let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut r1: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut r2: BTreeSet<(usize, usize)> = BTreeSet::new();
    // Fresh entities first, so witness clusters overlap only once the
    // pool runs dry; isolated clusters keep held-out rule facts from
    // leaking through shared neighbours. Sink entities stay out of the
    // pool so distractor traffic never lands inside a cluster.
    let mut pool: Vec<usize> = (sink_count..n).collect();
    pool.shuffle(&mut rng);
    let mut attempts = 0usize;
    while rule.len() < opts.rule_facts {
        attempts += 1;
        if attempts > opts.rule_facts * 100 + 1000 {
            return Err(Error::Generation(
                "could not place the requested rule facts; densities too high".into(),
            ));
        }
        let picks: [usize; 7] = if pool.len() >= 7 {
            std::array::from_fn(|_| pool.pop().expect("pool checked"))
        } else {
            std::array::from_fn(|_| rng.random_range(0..n))
        };
        let distinct = (1..picks.len()).all(|i| !picks[..i].contains(&picks[i]));
        let [x, z, y, z1, w1, z2, w2] = picks;
        if !distinct || used.contains(&(x, y)) {
            continue;
        }
        used.insert((x, y));
        rule.push((x, y));
        r1.insert((x, z));
        r2.insert((z, y));
        // Each witness hides among decoys: two chains
        // w -> r1 -> z' -> r2 -> y end at the witness terminal, and
        // the true midpoint z sends an r2 edge to each decoy head w.
        // Witness-shaped walks from either end of a rule fact reach
        // the decoy heads as easily as the true pair, but no rule
        // fact backs them, so path shape alone cannot pick x out.
        for (zp, w) in [(z1, w1), (z2, w2)] {
            r1.insert((w, zp));
            r2.insert((zp, y));
            r2.insert((z, w));
        }
    }

    // Distractor edges all drain into a few shared sink entities, so a
    // walk that wanders off a witness path reaches an entity common to
    // every rule cluster, which identifies no particular head. Sinks
    // only ever receive, so they never relay a walk back out.
    let mut noise: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    if opts.noise_relations > 0 {
        let mut attempts = 0usize;
        while noise.len() < opts.noise_facts {
            attempts += 1;
            if attempts > opts.noise_facts * 100 + 1000 {
                return Err(Error::Generation(
                    "could not place the requested noise facts".into(),
                ));
            }
            let h = rng.random_range(sink_count..n);
            let t = rng.random_range(0..sink_count);
            let r = rng.random_range(0..opts.noise_relations);
            noise.insert((h, r, t));
        }
    } else if opts.noise_facts > 0 {
        return Err(Error::Generation(
            "noise facts requested without noise relations".into(),
        ));
    }

    let mut facts = rule;
    facts.shuffle(&mut rng);
    let test_count = split_count(facts.len(), opts.test_fraction, "test")?;
    let valid_count = split_count(facts.len(), opts.valid_fraction, "valid")?;
    if test_count + valid_count >= facts.len() {
        return Err(Error::Generation(
            "splits leave no rule facts for train".into(),
        ));
    }
    let test: Vec<_> = facts[..test_count].to_vec();
    let valid: Vec<_> = facts[test_count..test_count + valid_count].to_vec();
    let train_rule: Vec<_> = facts[test_count + valid_count..].to_vec();

    // Entities the sampler never touched get a witness-shaped
    // distractor edge so the train vocabulary covers every index.
    let mut seen = vec![false; n];
    for &(x, y) in &facts {
        seen[x] = true;
        seen[y] = true;
    }
    for &(x, z) in &r1 {
        seen[x] = true;
        seen[z] = true;
    }
    for &(z, y) in &r2 {
        seen[z] = true;
        seen[y] = true;
    }
    for &(h, _, t) in &noise {
        seen[h] = true;
        seen[t] = true;
    }
    let anchor = seen
        .iter()
        .position(|&s| s)
        .expect("rule generation touches at least three entities");
    for u in 0..n {
        if !seen[u] {
            if u % 2 == 0 {
                r1.insert((u, anchor));
            } else {
                r2.insert((anchor, u));
            }
        }
    }

    let mut train_lines: Vec<String> = Vec::new();
    for &(x, y) in &train_rule {
        train_lines.push(format!("{}\trq\t{}", ent(x), ent(y)));
    }
    for &(x, z) in &r1 {
        train_lines.push(format!("{}\tr1\t{}", ent(x), ent(z)));
    }
    for &(z, y) in &r2 {
        train_lines.push(format!("{}\tr2\t{}", ent(z), ent(y)));
    }
    for &(h, r, t) in &noise {
        train_lines.push(format!("{}\tn{}\t{}", ent(h), r, ent(t)));
    }
    train_lines.sort_unstable();
    let mut valid_lines: Vec<String> = valid
        .iter()
        .map(|&(x, y)| format!("{}\trq\t{}", ent(x), ent(y)))
        .collect();
    valid_lines.sort_unstable();
    let mut test_lines: Vec<String> = test
        .iter()
        .map(|&(x, y)| format!("{}\trq\t{}", ent(x), ent(y)))
        .collect();
    test_lines.sort_unstable();

    let write = |name: &str, lines: &[String]| -> Result<()> {
        let path = dir.join(name);
        let mut body = lines.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        std::fs::write(&path, body).map_err(|e| Error::io(path, e))
    };
    write("train.txt", &train_lines)?;
    write("valid.txt", &valid_lines)?;
    write("test.txt", &test_lines)?;

    Ok(SynthSummary {
        entities: n,
        train: train_lines.len(),
        valid: valid_lines.len(),
        test: test_lines.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn generate(opts: &SynthOptions) -> (tempfile::TempDir, SynthSummary) {
        let dir = tempfile::tempdir().unwrap();
        let summary = generate_synthetic_kg(dir.path(), opts).unwrap();
        (dir, summary)
    }

    fn parse(path: &Path) -> Vec<(String, String, String)> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| {
                let mut it = l.split('\t');
                (
                    it.next().unwrap().to_string(),
                    it.next().unwrap().to_string(),
                    it.next().unwrap().to_string(),
                )
            })
            .collect()
    }

    #[test]
    fn held_out_rule_facts_keep_train_witnesses() {
        let opts = SynthOptions::desk(50, 100, 5);
        let (dir, summary) = generate(&opts);
        let train = parse(&dir.path().join("train.txt"));
        let r1: BTreeSet<(String, String)> = train
            .iter()
            .filter(|(_, r, _)| r == "r1")
            .map(|(h, _, t)| (h.clone(), t.clone()))
            .collect();
        let mut r2_by_head: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (h, r, t) in &train {
            if r == "r2" {
                r2_by_head.entry(h.clone()).or_default().push(t.clone());
            }
        }
        let mut held_out = parse(&dir.path().join("test.txt"));
        held_out.extend(parse(&dir.path().join("valid.txt")));
        assert_eq!(held_out.len(), summary.test + summary.valid);
        assert!(!held_out.is_empty());
        for (x, r, y) in &held_out {
            assert_eq!(r, "rq");
            let witnessed = r1.iter().any(|(h, z)| {
                h == x
                    && r2_by_head
                        .get(z)
                        .is_some_and(|tails| tails.contains(y))
            });
            assert!(witnessed, "{x} rq {y} lacks a train witness");
        }
    }

    #[test]
    fn the_two_hop_closure_covers_every_rule_fact() {
        let opts = SynthOptions::desk(40, 80, 6);
        let (dir, _) = generate(&opts);
        let train = parse(&dir.path().join("train.txt"));
        let mut closure: BTreeSet<(String, String)> = BTreeSet::new();
        for (x, ra, z) in &train {
            if ra != "r1" {
                continue;
            }
            for (zz, rb, y) in &train {
                if rb == "r2" && zz == z {
                    closure.insert((x.clone(), y.clone()));
                }
            }
        }
        for name in ["train.txt", "valid.txt", "test.txt"] {
            for (x, r, y) in parse(&dir.path().join(name)) {
                if r == "rq" {
                    assert!(
                        closure.contains(&(x.clone(), y.clone())),
                        "{x} rq {y} escaped the closure"
                    );
                }
            }
        }
    }

    #[test]
    fn splits_never_overlap() {
        let opts = SynthOptions::desk(30, 60, 7);
        let (dir, summary) = generate(&opts);
        let train: BTreeSet<_> = parse(&dir.path().join("train.txt"))
            .into_iter()
            .collect();
        let valid: BTreeSet<_> = parse(&dir.path().join("valid.txt"))
            .into_iter()
            .collect();
        let test: BTreeSet<_> = parse(&dir.path().join("test.txt"))
            .into_iter()
            .collect();
        assert!(train.is_disjoint(&valid));
        assert!(train.is_disjoint(&test));
        assert!(valid.is_disjoint(&test));
        let rq_total = train.iter().filter(|(_, r, _)| r == "rq").count()
            + valid.len()
            + test.len();
        assert_eq!(rq_total, 60);
        assert_eq!(summary.test, (60.0f64 * 0.2).round() as usize);
        assert_eq!(summary.valid, (60.0f64 * 0.1).round() as usize);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let read_all = |dir: &Path| {
            ["train.txt", "valid.txt", "test.txt"]
                .map(|n| std::fs::read(dir.join(n)).unwrap())
        };
        let (dir_a, _) = generate(&SynthOptions::desk(25, 40, 9));
        let (dir_b, _) = generate(&SynthOptions::desk(25, 40, 9));
        let (dir_c, _) = generate(&SynthOptions::desk(25, 40, 10));
        assert_eq!(read_all(dir_a.path()), read_all(dir_b.path()));
        assert_ne!(read_all(dir_a.path()), read_all(dir_c.path()));
    }

    #[test]
    fn every_entity_reaches_the_train_vocabulary() {
        let opts = SynthOptions {
            entities: 100,
            rule_facts: 30,
            noise_relations: 1,
            noise_facts: 10,
            valid_fraction: 0.1,
            test_fraction: 0.2,
            seed: 11,
        };
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic_kg(dir.path(), &opts).unwrap();
        let data = crate::kg::load_dataset(dir.path()).unwrap();
        assert_eq!(data.vocab.entity_count(), 100);
        assert_eq!(data.vocab.relation_count(), 4);
    }

    #[test]
    fn infeasible_requests_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            SynthOptions::desk(10, 20, 1),
            SynthOptions::desk(20, 20 * 19 + 1, 1),
            SynthOptions {
                valid_fraction: 0.6,
                test_fraction: 0.5,
                ..SynthOptions::desk(30, 40, 1)
            },
            SynthOptions {
                test_fraction: 0.01,
                ..SynthOptions::desk(30, 3, 1)
            },
            SynthOptions {
                noise_relations: 0,
                noise_facts: 5,
                ..SynthOptions::desk(30, 40, 1)
            },
        ];
        for opts in cases {
            let err = generate_synthetic_kg(dir.path(), &opts).unwrap_err();
            assert!(matches!(err, Error::Generation(_)), "got {err:?}");
        }
    }
}
