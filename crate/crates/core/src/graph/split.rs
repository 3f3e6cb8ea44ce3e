use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample indices of one train/validation/test partition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// k-fold plan: `assignment[i]` is the fold whose test set holds sample `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub assignment: Vec<usize>,
    pub folds: Vec<Fold>,
}

/// Checks that a fold partitions `0..n`.
pub fn validate_fold(fold: &Fold, n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in fold.train.iter().chain(&fold.val).chain(&fold.test) {
        if i >= n {
            return Err(Error::Data(format!("split index {i} out of range for {n} samples")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Data(format!("sample {i} appears twice in a split")));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Data("split does not cover every sample".into()));
    }
    Ok(())
}

/// Sample indices grouped by class (a single group when unstratified),
/// each group shuffled.
fn shuffled_groups(n: usize, strata: Option<&[usize]>, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    let mut groups: Vec<Vec<usize>> = match strata {
        Some(s) => {
            if s.len() != n {
                return Err(Error::Data(format!("{} strata labels for {n} samples", s.len())));
            }
            let k = s.iter().max().map_or(0, |m| m + 1);
            let mut g = vec![Vec::new(); k];
            for (i, &c) in s.iter().enumerate() {
                g[c].push(i);
            }
            g.retain(|v| !v.is_empty());
            g
        }
        None => vec![(0..n).collect()],
    };
    for g in &mut groups {
        g.shuffle(rng);
    }
    Ok(groups)
}

/// Moves a `val_fraction` share of each class of `pool` into validation.
fn carve_val(
    pool: &[usize],
    strata: Option<&[usize]>,
    val_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let local = strata.map(|s| pool.iter().map(|&i| s[i]).collect::<Vec<_>>());
    for group in shuffled_groups(pool.len(), local.as_deref(), rng)? {
        let take = (val_fraction * group.len() as f64).round() as usize;
        val.extend(group[..take].iter().map(|&i| pool[i]));
        train.extend(group[take..].iter().map(|&i| pool[i]));
    }
    if val.is_empty() && val_fraction > 0.0 && train.len() > 1 {
        val.push(train.pop().expect("non-empty"));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if !(0.0..1.0).contains(&f) {
        return Err(Error::Config(format!("{name} {f} outside [0, 1)")));
    }
    Ok(())
}

/// Stratified (when `strata` is given) k-fold cross-validation; inside
/// each fold a `val_fraction` share of the non-test samples validates.
pub fn make_splits(
    n_samples: usize,
    k_folds: usize,
    val_fraction: f64,
    strata: Option<&[usize]>,
    seed: u64,
) -> Result<SplitPlan> {
    if k_folds < 2 {
        return Err(Error::Config(format!("k_folds must be at least 2, got {k_folds}")));
    }
    if n_samples < k_folds {
        return Err(Error::Config(format!(
            "{n_samples} samples cannot fill {k_folds} folds"
        )));
    }
    check_fraction("val_fraction", val_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; n_samples];
    // dealing continues across classes so fold sizes differ by at most one
    let mut next = 0;
    for group in shuffled_groups(n_samples, strata, &mut rng)? {
        for i in group {
            assignment[i] = next % k_folds;
            next += 1;
        }
    }
    let mut folds = Vec::with_capacity(k_folds);
    for f in 0..k_folds {
        let test: Vec<usize> = (0..n_samples).filter(|&i| assignment[i] == f).collect();
        let pool: Vec<usize> = (0..n_samples).filter(|&i| assignment[i] != f).collect();
        let (train, val) = carve_val(&pool, strata, val_fraction, &mut rng)?;
        folds.push(Fold { train, val, test });
    }
    Ok(SplitPlan { assignment, folds })
}

/// One stratified train/validation/test partition.
pub fn holdout_split(
    n_samples: usize,
    val_fraction: f64,
    test_fraction: f64,
    strata: Option<&[usize]>,
    seed: u64,
) -> Result<Fold> {
    check_fraction("val_fraction", val_fraction)?;
    check_fraction("test_fraction", test_fraction)?;
    if val_fraction + test_fraction >= 1.0 {
        return Err(Error::Config("validation and test fractions leave no training data".into()));
    }
    if n_samples == 0 {
        return Err(Error::Config("cannot split zero samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..n_samples).collect();
    let (rest, mut test) = carve_val(&all, strata, test_fraction, &mut rng)?;
    let (train, mut val) = carve_val(&rest, strata, val_fraction / (1.0 - test_fraction), &mut rng)?;
    test.sort_unstable();
    val.sort_unstable();
    Ok(Fold { train, val, test })
}
