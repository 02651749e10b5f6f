//! Reference implementations written for clarity rather than speed, and the
//! shared fixtures the integration tests are built on.
#![allow(dead_code)]

use medcode::corpus::SyntheticSpec;
use medcode::metrics::{
    self, auc_roc, confusion_counts, exact_match_ratio, f1_macro, f1_micro, Averaging, MacroFormula, MetricPolicy,
    MissingClass, PredictionSet,
};
use medcode::models::{
    accumulate_gradients, bce_loss, forward_masked, Architecture, Decoder, Encoder, ModelConfig, Parameters, TrainConfig,
};
use ndarray::Array2;
use rand::Rng;

pub type Rows<T> = Vec<Vec<T>>;

pub fn rows(p: &PredictionSet) -> (Rows<f64>, Rows<bool>) {
    let s = p.scores.rows().into_iter().map(|r| r.to_vec()).collect();
    let t = p.targets.rows().into_iter().map(|r| r.to_vec()).collect();
    (s, t)
}

pub fn prediction_set(scores: Rows<f64>, targets: Rows<bool>) -> PredictionSet {
    let n = scores.len();
    let l = scores.first().map_or(0, Vec::len);
    PredictionSet::new(
        (0..n).map(|i| format!("doc{i:04}")).collect(),
        (0..l).map(|j| format!("C{j:03}")).collect(),
        Array2::from_shape_fn((n, l), |(i, j)| scores[i][j]),
        Array2::from_shape_fn((n, l), |(i, j)| targets[i][j]),
    )
    .unwrap()
}

/// Random set with coarse scores (to force ties) on some draws and codes of
/// varying prevalence, including codes with no positives.
pub fn random_prediction_set<R: Rng>(rng: &mut R, max_docs: usize, max_codes: usize) -> PredictionSet {
    let n = rng.gen_range(1..=max_docs);
    let l = rng.gen_range(1..=max_codes);
    let coarse = rng.gen_bool(0.5);
    let rates: Vec<f64> = (0..l)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..0.6) })
        .collect();
    let targets: Rows<bool> = (0..n)
        .map(|_| rates.iter().map(|&r| rng.gen_bool(r)).collect())
        .collect();
    let scores: Rows<f64> = targets
        .iter()
        .map(|row| {
            row.iter()
                .map(|&t| {
                    let base: f64 = if coarse {
                        rng.gen_range(0..=10) as f64 / 10.0
                    } else {
                        rng.gen()
                    };
                    if t && rng.gen_bool(0.5) {
                        (base + 0.3).min(1.0)
                    } else {
                        base
                    }
                })
                .collect()
        })
        .collect();
    prediction_set(scores, targets)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Counts {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
}

pub fn column_counts(s: &Rows<f64>, t: &Rows<bool>, boundary: f64, j: usize) -> Counts {
    let mut c = Counts::default();
    for i in 0..s.len() {
        let predicted = s[i][j] > boundary;
        match (predicted, t[i][j]) {
            (true, true) => c.tp += 1.0,
            (true, false) => c.fp += 1.0,
            (false, true) => c.fn_ += 1.0,
            _ => {}
        }
    }
    c
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn micro_f1(s: &Rows<f64>, t: &Rows<bool>, boundary: f64) -> f64 {
    let l = s[0].len();
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for j in 0..l {
        let c = column_counts(s, t, boundary, j);
        tp += c.tp;
        fp += c.fp;
        fn_ += c.fn_;
    }
    ratio(2.0 * tp, 2.0 * tp + fp + fn_)
}

/// `None` when no code qualifies for averaging.
pub fn macro_f1(s: &Rows<f64>, t: &Rows<bool>, boundary: f64, harmonic: bool, zero_fill: bool) -> Option<f64> {
    let l = s[0].len();
    let (mut f1s, mut ps, mut rs) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..l {
        let c = column_counts(s, t, boundary, j);
        if c.tp + c.fn_ == 0.0 && !zero_fill {
            continue;
        }
        let p = ratio(c.tp, c.tp + c.fp);
        let r = ratio(c.tp, c.tp + c.fn_);
        f1s.push(ratio(2.0 * c.tp, 2.0 * c.tp + c.fp + c.fn_));
        ps.push(p);
        rs.push(r);
    }
    if f1s.is_empty() {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Some(if harmonic {
        let (p, r) = (mean(&ps), mean(&rs));
        ratio(2.0 * p * r, p + r)
    } else {
        mean(&f1s)
    })
}

pub fn exact_match(s: &Rows<f64>, t: &Rows<bool>, boundary: f64) -> f64 {
    let hits = s
        .iter()
        .zip(t)
        .filter(|(sr, tr)| sr.iter().zip(tr.iter()).all(|(&x, &y)| (x > boundary) == y))
        .count();
    hits as f64 / s.len() as f64
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by enumerating every pair.
pub fn pairwise_auc(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

pub fn micro_auc(s: &Rows<f64>, t: &Rows<bool>) -> Option<f64> {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (sr, tr) in s.iter().zip(t) {
        for (&x, &y) in sr.iter().zip(tr) {
            if y {
                pos.push(x)
            } else {
                neg.push(x)
            }
        }
    }
    pairwise_auc(&pos, &neg)
}

/// Mean AUC over codes where it is defined, with the number left out.
pub fn macro_auc(s: &Rows<f64>, t: &Rows<bool>) -> Option<(f64, usize)> {
    let l = s[0].len();
    let mut values = Vec::new();
    for j in 0..l {
        let pos: Vec<f64> = (0..s.len()).filter(|&i| t[i][j]).map(|i| s[i][j]).collect();
        let neg: Vec<f64> = (0..s.len()).filter(|&i| !t[i][j]).map(|i| s[i][j]).collect();
        if let Some(a) = pairwise_auc(&pos, &neg) {
            values.push(a);
        }
    }
    if values.is_empty() {
        return None;
    }
    Some((values.iter().sum::<f64>() / values.len() as f64, l - values.len()))
}

/// 0-based rank of each code: higher scores first, ties by code index.
pub fn ranks(scores: &[f64]) -> Vec<usize> {
    (0..scores.len())
        .map(|j| {
            (0..scores.len())
                .filter(|&i| scores[i] > scores[j] || (scores[i] == scores[j] && i < j))
                .count()
        })
        .collect()
}

pub fn precision_at_k(s: &Rows<f64>, t: &Rows<bool>, k: usize) -> f64 {
    let mut total = 0.0;
    for (sr, tr) in s.iter().zip(t) {
        let rk = ranks(sr);
        let hits = (0..sr.len()).filter(|&j| rk[j] < k && tr[j]).count();
        total += hits as f64 / k as f64;
    }
    total / s.len() as f64
}

pub fn r_precision(s: &Rows<f64>, t: &Rows<bool>) -> Option<f64> {
    let mut values = Vec::new();
    for (sr, tr) in s.iter().zip(t) {
        let r = tr.iter().filter(|&&y| y).count();
        if r == 0 {
            continue;
        }
        let rk = ranks(sr);
        let hits = (0..sr.len()).filter(|&j| rk[j] < r && tr[j]).count();
        values.push(hits as f64 / r as f64);
    }
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn mean_average_precision(s: &Rows<f64>, t: &Rows<bool>) -> Option<f64> {
    let mut values = Vec::new();
    for (sr, tr) in s.iter().zip(t) {
        let relevant: Vec<usize> = (0..sr.len()).filter(|&j| tr[j]).collect();
        if relevant.is_empty() {
            continue;
        }
        let rk = ranks(sr);
        let ap: f64 = relevant
            .iter()
            .map(|&j| {
                let above = relevant.iter().filter(|&&i| rk[i] <= rk[j]).count();
                above as f64 / (rk[j] + 1) as f64
            })
            .sum::<f64>()
            / relevant.len() as f64;
        values.push(ap);
    }
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Pearson correlation from raw sums.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx <= 0.0 || vy <= 0.0 {
        return None;
    }
    Some((n * sxy - sx * sy) / (vx * vy).sqrt())
}

/// Average rank by counting smaller and equal values.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value for a correlation of `r` over `n` points (t test).
pub fn correlation_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let t2 = r * r * df / (1.0 - r * r);
    incomplete_beta(df / 2.0, 0.5, df / (df + t2))
}

/// Upper tail of the chi-squared distribution with one degree of freedom:
/// Q(1/2, x/2) from the incomplete-gamma series or continued fraction.
pub fn chi2_1_sf(x: f64) -> f64 {
    let a = 0.5;
    let z = x / 2.0;
    if z <= 0.0 {
        return 1.0;
    }
    let ln_front = -z + a * z.ln() - ln_gamma(a);
    if z < a + 1.0 {
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= z / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * ln_front.exp()
    } else {
        const TINY: f64 = 1e-300;
        let mut b = z + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        ln_front.exp() * h
    }
}

/// McNemar p-value from discordant counts: exact two-sided binomial below
/// 25 discordant pairs, continuity-corrected chi-squared otherwise.
pub fn mcnemar_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    if n < 25 {
        let k = b.min(c);
        let mut total = 0.0;
        let mut choose = 1.0f64;
        for i in 0..=k {
            if i > 0 {
                choose = choose * (n - i + 1) as f64 / i as f64;
            }
            total += choose;
        }
        (2.0 * total / 2f64.powi(n as i32)).min(1.0)
    } else {
        let d = ((b as f64 - c as f64).abs() - 1.0).max(0.0);
        chi2_1_sf(d * d / n as f64)
    }
}

/// Discordant counts over paired (document, code) decisions.
pub fn discordant(a: &PredictionSet, b: &PredictionSet, boundary: f64) -> (u64, u64) {
    let (mut x, mut y) = (0, 0);
    for i in 0..a.n_docs() {
        for j in 0..a.n_codes() {
            let ra = (a.scores[[i, j]] > boundary) == a.targets[[i, j]];
            let rb = (b.scores[[i, j]] > boundary) == b.targets[[i, j]];
            match (ra, rb) {
                (true, false) => x += 1,
                (false, true) => y += 1,
                _ => {}
            }
        }
    }
    (x, y)
}

/// AdamW on f(p) = (p - 3)^2 written out step by step.
pub fn adamw_scalar_trace(p0: f64, lr: f64, wd: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * (p - 3.0);
        p -= lr * wd * p;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let v_hat = v / (1.0 - b2.powi(t as i32));
        p -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(p);
    }
    out
}

/// 1,000 documents from 500 patients with 50 Zipf-distributed codes, each
/// code signalled by its own trigger tokens.
pub fn trigger_corpus_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_patients: 500,
        docs_per_patient: (2, 2),
        n_codes: 50,
        seed: 7,
        ..Default::default()
    }
}

pub fn trigger_architecture(decoder: Decoder) -> Architecture {
    Architecture {
        d_e: 32,
        encoder: Encoder::Conv { window: 3, d_h: 32 },
        decoder,
    }
}

/// Settings from the pilot run: about 1,800 updates, so the warmup is
/// shortened to 100 updates.
pub fn trigger_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.005,
        weight_decay: 0.001,
        dropout: 0.1,
        batch_size: 8,
        epochs: 20,
        warmup_updates: 100,
        seed,
        ..Default::default()
    }
}

pub const TOL: f64 = 1e-9;

pub fn policy(boundary: f64, formula: MacroFormula, missing: MissingClass) -> MetricPolicy {
    MetricPolicy {
        boundary,
        macro_formula: formula,
        missing_class: missing,
    }
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

/// Compares every metric against the reference implementations.
pub fn check_against_oracle(p: &PredictionSet, boundary: f64) -> Result<(), String> {
    let (s, t) = rows(p);
    let counts = confusion_counts(p, boundary);
    let fail = |what: &str, got: f64, want: f64| Err(format!("{what}: got {got}, want {want}"));
    let got = f1_micro(&counts);
    let want = micro_f1(&s, &t, boundary);
    if !close(got, want) {
        return fail("micro f1", got, want);
    }
    for formula in [MacroFormula::Arithmetic, MacroFormula::HarmonicOfMeans] {
        for missing in [MissingClass::Ignore, MissingClass::ZeroFill] {
            let got = f1_macro(&counts, &policy(boundary, formula, missing)).ok();
            let want = macro_f1(&s, &t, boundary, formula == MacroFormula::HarmonicOfMeans, missing == MissingClass::ZeroFill);
            match (got, want) {
                (Some(g), Some(w)) if close(g, w) => {}
                (None, None) => {}
                _ => return Err(format!("macro {formula:?} {missing:?}: got {got:?}, want {want:?}")),
            }
        }
    }
    let got = exact_match_ratio(p, boundary);
    let want = exact_match(&s, &t, boundary);
    if !close(got, want) {
        return fail("exact match", got, want);
    }
    let got = auc_roc(p, Averaging::Micro, MissingClass::Ignore).ok().map(|a| a.value);
    let want = micro_auc(&s, &t);
    if got.is_some() != want.is_some() || got.zip(want).is_some_and(|(g, w)| !close(g, w)) {
        return Err(format!("micro auc: got {got:?}, want {want:?}"));
    }
    for missing in [MissingClass::Ignore, MissingClass::ZeroFill] {
        let got = auc_roc(p, Averaging::Macro, missing).ok().map(|a| (a.value, a.n_excluded));
        let want = macro_auc(&s, &t);
        match (got, want) {
            (Some((g, ge)), Some((w, we))) if close(g, w) && ge == we => {}
            (None, None) => {}
            _ => return Err(format!("macro auc: got {got:?}, want {want:?}")),
        }
    }
    for k in [5, 8, 15] {
        if k <= p.n_codes() {
            let got = metrics::precision_at_k(p, k).unwrap();
            let want = self::precision_at_k(&s, &t, k);
            if !close(got, want) {
                return fail(&format!("P@{k}"), got, want);
            }
        } else if metrics::precision_at_k(p, k).is_ok() {
            return Err(format!("P@{k} accepted k above {} codes", p.n_codes()));
        }
    }
    let got = metrics::r_precision(p).ok().map(|v| v.value);
    let want = self::r_precision(&s, &t);
    if got.is_some() != want.is_some() || got.zip(want).is_some_and(|(g, w)| !close(g, w)) {
        return Err(format!("r-precision: got {got:?}, want {want:?}"));
    }
    let got = metrics::mean_average_precision(p).ok().map(|v| v.value);
    let want = self::mean_average_precision(&s, &t);
    if got.is_some() != want.is_some() || got.zip(want).is_some_and(|(g, w)| !close(g, w)) {
        return Err(format!("map: got {got:?}, want {want:?}"));
    }
    Ok(())
}

pub const FD_STEP: f64 = 1e-5;

fn fd_loss(params: &Parameters, config: &ModelConfig, tokens: &[usize], mask: &[bool], drop: Option<&Array2<f64>>, y: &[bool]) -> f64 {
    let t = forward_masked(params, config, tokens, mask, drop).unwrap();
    bce_loss(t.probabilities.as_slice().unwrap(), y)
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Worst relative error over every scalar parameter.
pub fn fd_worst_error(config: &ModelConfig, params: &Parameters, tokens: &[usize], mask: &[bool], drop: Option<&Array2<f64>>, y: &[bool]) -> (f64, String) {
    let trace = forward_masked(params, config, tokens, mask, drop).unwrap();
    let mut analytic = params.zeros_like();
    accumulate_gradients(&trace, params, config, y, 1.0, &mut analytic).unwrap();
    let analytic = analytic.tensors();
    let mut worst = (0.0, String::new());
    let mut probe = params.clone();
    let n_tensors = analytic.len();
    for ti in 0..n_tensors {
        let len = analytic[ti].1.len();
        for j in 0..len {
            let orig = probe.tensors_mut()[ti].1[j];
            probe.tensors_mut()[ti].1[j] = orig + FD_STEP;
            let up = fd_loss(&probe, config, tokens, mask, drop, y);
            probe.tensors_mut()[ti].1[j] = orig - FD_STEP;
            let down = fd_loss(&probe, config, tokens, mask, drop, y);
            probe.tensors_mut()[ti].1[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic[ti].1[j], numeric);
            if err > worst.0 {
                worst = (err, format!("{}[{j}] analytic {} numeric {numeric}", analytic[ti].0, analytic[ti].1[j]));
            }
        }
    }
    worst
}
