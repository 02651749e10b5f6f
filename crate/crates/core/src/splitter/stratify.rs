use rand::seq::SliceRandom;
use rand::Rng;

/// A stratification unit: a weight (document count) and sorted label indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub weight: f64,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    /// Subset index chosen for each unit.
    pub subset_of: Vec<usize>,
    /// Units in the order they were placed.
    pub order: Vec<usize>,
}

const TIE_EPS: f64 = 1e-9;

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_EPS * a.abs().max(b.abs()).max(1.0)
}

/// Indices attaining the maximum of `score` among `candidates`, within tolerance.
fn argmax_set(candidates: &[usize], score: impl Fn(usize) -> f64) -> Vec<usize> {
    let best = candidates
        .iter()
        .map(|&j| score(j))
        .fold(f64::NEG_INFINITY, f64::max);
    candidates
        .iter()
        .copied()
        .filter(|&j| near(score(j), best))
        .collect()
}

/// Greedy iterative stratification with real-valued quotas.
///
/// Quotas start at `ratio * weight` per subset (overall and per label) and
/// are decremented by each placed unit's weight. The loop takes the label
/// with the fewest unplaced units (lowest index on ties) and places each of
/// its units into the subset with the largest remaining quota for that
/// label, then the largest overall quota, then a seeded uniform draw.
/// Units without labels are placed last by overall quota.
pub fn iterative_stratify<R: Rng>(
    units: &[Unit],
    ratios: &[f64],
    n_labels: usize,
    rng: &mut R,
) -> Placement {
    let k = ratios.len();
    let total: f64 = units.iter().map(|u| u.weight).sum();
    let mut quota: Vec<f64> = ratios.iter().map(|r| r * total).collect();

    let mut label_weight = vec![0.0; n_labels];
    let mut remaining = vec![0usize; n_labels];
    let mut carriers: Vec<Vec<usize>> = vec![Vec::new(); n_labels];

    let mut visit: Vec<usize> = (0..units.len()).collect();
    visit.shuffle(rng);
    for &u in &visit {
        for &l in &units[u].labels {
            label_weight[l] += units[u].weight;
            remaining[l] += 1;
            carriers[l].push(u);
        }
    }
    let mut label_quota: Vec<Vec<f64>> = ratios
        .iter()
        .map(|r| label_weight.iter().map(|w| r * w).collect())
        .collect();

    let all: Vec<usize> = (0..k).collect();
    let mut subset_of = vec![usize::MAX; units.len()];
    let mut order = Vec::with_capacity(units.len());

    let mut place = |u: usize,
                     j: usize,
                     quota: &mut [f64],
                     label_quota: &mut [Vec<f64>],
                     remaining: &mut [usize],
                     subset_of: &mut [usize]| {
        subset_of[u] = j;
        order.push(u);
        quota[j] -= units[u].weight;
        for &l in &units[u].labels {
            label_quota[j][l] -= units[u].weight;
            remaining[l] -= 1;
        }
    };

    loop {
        let rarest = remaining
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .min_by_key(|(l, &n)| (n, *l))
            .map(|(l, _)| l);
        let Some(label) = rarest else { break };
        for &u in &carriers[label] {
            if subset_of[u] != usize::MAX {
                continue;
            }
            let by_label = argmax_set(&all, |j| label_quota[j][label]);
            let by_total = argmax_set(&by_label, |j| quota[j]);
            let j = by_total[rng.gen_range(0..by_total.len())];
            place(u, j, &mut quota, &mut label_quota, &mut remaining, &mut subset_of);
        }
    }
    for &u in &visit {
        if subset_of[u] == usize::MAX {
            let by_total = argmax_set(&all, |j| quota[j]);
            let j = by_total[rng.gen_range(0..by_total.len())];
            place(u, j, &mut quota, &mut label_quota, &mut remaining, &mut subset_of);
        }
    }
    Placement { subset_of, order }
}
