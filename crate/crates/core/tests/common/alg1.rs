//! Fixtures and checks for the Auto-K dictionary.

use glyphret::data::ClassKey;
use glyphret::dictionary::{
    auto_k, bank_extend, build_bank, group_by_class, rank_classes, AutoKConfig, BankConfig, BankStrategy,
    ClassGroups, PrototypeBank,
};
use glyphret::seed::{rng_for, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub const FIXTURE_SEEDS: u64 = 100;
pub const REQUIRED_K3_HITS: usize = 95;

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / s).collect()
}

pub fn random_unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    unit((0..dim).map(|_| normal(rng)).collect())
}

/// Three well-separated modes of 20 points each on the 16-sphere.
pub fn three_mode_fixture(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, "three-mode", &[]);
    let centres: Vec<Vec<f64>> = (0..3).map(|_| random_unit(16, &mut rng)).collect();
    let mut points = Vec::new();
    for c in &centres {
        for _ in 0..20 {
            points.push(unit(c.iter().map(|&x| x + 0.08 * normal(&mut rng)).collect()));
        }
    }
    points
}

/// Seeds on which Auto-K picks three prototypes for the fixture.
pub fn three_mode_hits() -> usize {
    (0..FIXTURE_SEEDS)
        .filter(|&s| auto_k(&three_mode_fixture(s), &AutoKConfig::default(), s).unwrap() == 3)
        .count()
}

/// Random classes with 1..=max_size points each.
pub fn random_groups(classes: usize, max_size: usize, dim: usize, seed: u64) -> ClassGroups<f64> {
    let mut rng = rng_for(seed, "random-groups", &[]);
    let mut items = Vec::new();
    for c in 0..classes {
        let centre = random_unit(dim, &mut rng);
        let n = rng.random_range(1..=max_size);
        for _ in 0..n {
            let v = unit(centre.iter().map(|&x| x + 0.4 * normal(&mut rng)).collect());
            items.push((ClassKey::new(c % 3, format!("k{c:03}")), v));
        }
    }
    group_by_class(items)
}

/// Pointer-array invariants checked from scratch.
pub fn pointers_consistent(bank: &PrototypeBank<f64>, groups: &ClassGroups<f64>, k_max: usize) -> Result<(), String> {
    let p = &bank.pointers;
    if p.len() != groups.len() + 1 || p[0] != 0 {
        return Err(format!("pointer array has length {} for {} classes", p.len(), groups.len()));
    }
    if bank.class_keys != groups.keys().cloned().collect::<Vec<_>>() {
        return Err("class keys are not in sorted order".into());
    }
    let mut total = 0;
    for (c, pts) in groups.values().enumerate() {
        let k = p[c + 1] - p[c];
        if k == 0 || k > pts.len() || k > k_max {
            return Err(format!("class {c} owns {k} prototypes for {} points", pts.len()));
        }
        total += k;
        if p[c + 1] != total {
            return Err(format!("prefix sum breaks at class {c}"));
        }
    }
    if bank.prototypes.len() != total * bank.dim {
        return Err("prototype storage does not match the last pointer".into());
    }
    bank.validate().map_err(|e| e.to_string())
}

/// Ranking by explicit loops over every prototype row.
pub fn brute_force_rank(query: &[f64], bank: &PrototypeBank<f64>) -> Vec<(ClassKey, f64)> {
    let qn = query.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(usize, f64)> = (0..bank.class_keys.len())
        .map(|c| {
            let mut best = f64::NEG_INFINITY;
            for row in bank.pointers[c]..bank.pointers[c + 1] {
                let proto = &bank.prototypes[row * bank.dim..(row + 1) * bank.dim];
                let s = query.iter().zip(proto).map(|(a, b)| a * b).sum::<f64>() / qn;
                if s > best {
                    best = s;
                }
            }
            (c, best)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(c, s)| (bank.class_keys[c].clone(), s)).collect()
}

pub fn strategies() -> [BankStrategy; 3] {
    [
        BankStrategy::AutoK(AutoKConfig::default()),
        BankStrategy::Mean,
        BankStrategy::RandomSample { m: 8 },
    ]
}

/// Checks pointer sums on banks of every strategy and exact agreement of
/// `rank_classes` with the brute-force scan on 50-class fixtures.
pub fn bank_checks(fixtures: u64) -> Result<(), String> {
    for seed in 0..fixtures {
        let groups = random_groups(50, 40, 12, seed);
        for strategy in strategies() {
            let bank = build_bank(&groups, BankConfig { strategy, seed }).map_err(|e| e.to_string())?;
            let k_max = match strategy {
                BankStrategy::AutoK(c) => c.k_max,
                BankStrategy::Mean => 1,
                BankStrategy::RandomSample { m } => m,
            };
            pointers_consistent(&bank, &groups, k_max)?;
            let mut rng = rng_for(seed, "queries", &[]);
            for _ in 0..20 {
                let q: Vec<f64> = (0..12).map(|_| normal(&mut rng)).collect();
                let fast = rank_classes(&q, &bank, 50).map_err(|e| e.to_string())?;
                if fast != brute_force_rank(&q, &bank) {
                    return Err(format!("ranking differs from brute force (seed {seed}, {strategy:?})"));
                }
            }
        }
    }
    Ok(())
}

/// Extends a bank script by script and checks that, for random queries,
/// every class already present keeps exactly the score it had.
pub fn append_only_checks(fixtures: u64) -> Result<(), String> {
    for seed in 0..fixtures {
        let groups = random_groups(45, 30, 10, 100 + seed);
        for strategy in strategies() {
            let cfg = BankConfig { strategy, seed };
            let mut parts: Vec<ClassGroups<f64>> = vec![ClassGroups::new(); 3];
            for (k, v) in &groups {
                parts[k.script].insert(k.clone(), v.clone());
            }
            let mut bank = build_bank(&parts[0], cfg).map_err(|e| e.to_string())?;
            let mut rng = rng_for(seed, "append-queries", &[]);
            let queries: Vec<Vec<f64>> = (0..25).map(|_| (0..10).map(|_| normal(&mut rng)).collect()).collect();
            for part in &parts[1..] {
                let grown = bank_extend(&bank, part).map_err(|e| e.to_string())?;
                for q in &queries {
                    let old = bank.class_scores(q).map_err(|e| e.to_string())?;
                    let new = grown.class_scores(q).map_err(|e| e.to_string())?;
                    if new[..old.len()] != old[..] || grown.class_keys[..old.len()] != bank.class_keys[..] {
                        return Err(format!("extension changed existing scores (seed {seed}, {strategy:?})"));
                    }
                }
                bank = grown;
            }
        }
    }
    Ok(())
}
