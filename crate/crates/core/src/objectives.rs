//! Margin ranking objectives over in-batch imposters.
//!
//! `rank(a, p, i) = max(0, η − s(a, p) + s(a, i))` with `s(x, y) = xᵀy`.
//! A bidirectional pair term between modalities A and B adds
//! `Σⱼ rank(Aⱼ, Bⱼ, Bₖ) + Σⱼ rank(Bⱼ, Aⱼ, Aₗ)` with one sampled imposter
//! index per anchor. Losses are summed over the batch, not averaged.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{EmbeddingVec, Modality, Real};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Dot,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarginRankingParams {
    pub margin: f64,
    pub similarity: Similarity,
}

impl Default for MarginRankingParams {
    fn default() -> Self {
        MarginRankingParams {
            margin: 1.0,
            similarity: Similarity::Dot,
        }
    }
}

impl MarginRankingParams {
    pub fn validate(&self) -> Result<()> {
        if self.margin > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("margin must be positive, got {}", self.margin)))
        }
    }
}

/// Query/anchor modality and target/paired modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Direction {
    pub anchor: Modality,
    pub paired: Modality,
}

impl Direction {
    pub fn new(anchor: Modality, paired: Modality) -> Self {
        assert_ne!(anchor, paired, "a direction needs two distinct modalities");
        Direction { anchor, paired }
    }

    /// The six directions in table order: E→I, I→E, H→I, I→H, E→H, H→E.
    pub fn all() -> [Direction; 6] {
        use Modality::*;
        [
            Direction::new(AudioE, Image),
            Direction::new(Image, AudioE),
            Direction::new(AudioH, Image),
            Direction::new(Image, AudioH),
            Direction::new(AudioE, AudioH),
            Direction::new(AudioH, AudioE),
        ]
    }

    /// Short key such as `"e2i"`.
    pub fn key(&self) -> String {
        format!("{}2{}", self.anchor.code(), self.paired.code())
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.key())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let c: Vec<char> = s.trim().chars().collect();
        match c.as_slice() {
            [a, '2', b] => match (Modality::from_code(*a), Modality::from_code(*b)) {
                (Some(a), Some(b)) if a != b => Ok(Direction::new(a, b)),
                _ => Err(Error::Config(format!("unknown direction {s:?}"))),
            },
            _ => Err(Error::Config(format!("unknown direction {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioName {
    #[serde(rename = "e-i")]
    EI,
    #[serde(rename = "h-i")]
    HI,
    #[serde(rename = "e-h")]
    EH,
    #[serde(rename = "e-i-h")]
    EIH,
    #[serde(rename = "h-e-i-h")]
    HEIH,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [
        ScenarioName::EI,
        ScenarioName::HI,
        ScenarioName::EH,
        ScenarioName::EIH,
        ScenarioName::HEIH,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::EI => "e-i",
            ScenarioName::HI => "h-i",
            ScenarioName::EH => "e-h",
            ScenarioName::EIH => "e-i-h",
            ScenarioName::HEIH => "h-e-i-h",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_owned()))
    }
}

/// One bidirectional ranking term between two modalities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairTerm {
    pub a: Modality,
    pub b: Modality,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: ScenarioName,
    pub terms: Vec<PairTerm>,
}

impl ScenarioSpec {
    pub fn new(name: ScenarioName) -> Self {
        use Modality::*;
        let t = |a, b, weight| PairTerm { a, b, weight };
        let terms = match name {
            ScenarioName::EI => vec![t(AudioE, Image, 1.0)],
            ScenarioName::HI => vec![t(AudioH, Image, 1.0)],
            ScenarioName::EH => vec![t(AudioE, AudioH, 1.0)],
            ScenarioName::EIH => vec![t(AudioE, Image, 1.0), t(AudioH, Image, 1.0)],
            ScenarioName::HEIH => vec![t(AudioE, Image, 1.0), t(AudioH, Image, 1.0), t(AudioE, AudioH, 5.0)],
        };
        ScenarioSpec { name, terms }
    }

    /// Modalities whose encoders this scenario trains, in canonical order.
    pub fn modalities(&self) -> Vec<Modality> {
        Modality::ALL
            .into_iter()
            .filter(|m| self.terms.iter().any(|t| t.a == *m || t.b == *m))
            .collect()
    }

    /// Number of directed terms (two per bidirectional pair).
    pub fn directed_terms(&self) -> usize {
        2 * self.terms.len()
    }
}

/// Imposter index per directed term and batch position, never equal to the
/// position itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImposterDraw {
    pub batch_size: usize,
    pub indices: Vec<Vec<usize>>,
}

impl ImposterDraw {
    pub fn term(&self, t: usize) -> &[usize] {
        &self.indices[t]
    }

    /// Relabel batch positions by `perm` (item j moves to `perm[j]`).
    pub fn permuted(&self, perm: &[usize]) -> ImposterDraw {
        let indices = self
            .indices
            .iter()
            .map(|row| {
                let mut out = vec![0; row.len()];
                for (j, &k) in row.iter().enumerate() {
                    out[perm[j]] = perm[k];
                }
                out
            })
            .collect();
        ImposterDraw {
            batch_size: self.batch_size,
            indices,
        }
    }
}

/// Uniform draw over `{0..B−1} \ {j}`, independent per (j, term).
pub fn sample_imposters(batch_size: usize, n_terms: usize, seed: u64) -> Result<ImposterDraw> {
    if batch_size < 2 {
        return Err(Error::BatchTooSmall(batch_size));
    }
    let mut rng = seed::rng(seed, "imposters", &[]);
    let indices = (0..n_terms)
        .map(|_| {
            (0..batch_size)
                .map(|j| {
                    let r = rng.random_range(0..batch_size - 1);
                    if r >= j {
                        r + 1
                    } else {
                        r
                    }
                })
                .collect()
        })
        .collect();
    Ok(ImposterDraw { batch_size, indices })
}

fn dot<T: Real>(x: &[T], y: &[T]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| a.f64() * b.f64()).sum()
}

/// `max(0, η − aᵀp + aᵀi)` on raw vectors.
pub fn rank_loss_values<T: Real>(a: &[T], p: &[T], i: &[T], prm: &MarginRankingParams) -> Result<f64> {
    for other in [p, i] {
        if other.len() != a.len() {
            return Err(Error::Dimension {
                left: a.len(),
                right: other.len(),
            });
        }
    }
    let v = prm.margin - dot(a, p) + dot(a, i);
    Ok(if v.is_nan() { v } else { v.max(0.0) })
}

pub fn rank_loss(a: &EmbeddingVec, p: &EmbeddingVec, i: &EmbeddingVec, prm: &MarginRankingParams) -> Result<f64> {
    rank_loss_values(&a.values, &p.values, &i.values, prm)
}

/// Gradient buffers for the embeddings of each modality, one vector per
/// batch item.
pub type EmbeddingGrads<T> = BTreeMap<Modality, Vec<Vec<T>>>;

/// One directed sum `Σⱼ rank(anchorⱼ, pairedⱼ, paired[imp[j]])`, optionally
/// accumulating `weight·∂/∂embedding` into `grads`.
#[allow(clippy::too_many_arguments)]
fn directed<T: Real>(
    anchor: &[Vec<T>],
    paired: &[Vec<T>],
    imp: &[usize],
    margin: f64,
    weight: f64,
    grads: Option<(&mut Vec<Vec<T>>, &mut Vec<Vec<T>>)>,
) -> f64 {
    let mut total = 0.0;
    let mut grads = grads;
    for (j, &k) in imp.iter().enumerate() {
        let v = margin - dot(&anchor[j], &paired[j]) + dot(&anchor[j], &paired[k]);
        // subgradient 0 at the kink; NaN passes through to the total
        if v.is_nan() {
            total += v;
        } else if v > 0.0 {
            total += v;
            if let Some((ga, gp)) = grads.as_mut() {
                let w = T::of(weight);
                for c in 0..anchor[j].len() {
                    ga[j][c] += w * (paired[k][c] - paired[j][c]);
                    gp[j][c] -= w * anchor[j][c];
                    gp[k][c] += w * anchor[j][c];
                }
            }
        }
    }
    total
}

fn check_batch<T>(a: &[Vec<T>], b: &[Vec<T>], draw: &[&[usize]]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::BatchTooSmall(a.len()));
    }
    let d = a[0].len();
    if let Some(bad) = a.iter().chain(b).find(|v| v.len() != d) {
        return Err(Error::Dimension { left: d, right: bad.len() });
    }
    for row in draw {
        if row.len() != a.len() || row.iter().enumerate().any(|(j, &k)| k == j || k >= a.len()) {
            return Err(Error::Config("imposter draw does not fit the batch".into()));
        }
    }
    Ok(())
}

/// Bidirectional term using draw rows `imp_b` (imposters from B for anchors
/// in A) and `imp_a` (imposters from A for anchors in B).
pub fn pair_loss_generic<T: Real>(
    a: &[Vec<T>],
    b: &[Vec<T>],
    imp_b: &[usize],
    imp_a: &[usize],
    prm: &MarginRankingParams,
) -> Result<f64> {
    check_batch(a, b, &[imp_b, imp_a])?;
    Ok(directed(a, b, imp_b, prm.margin, 1.0, None) + directed(b, a, imp_a, prm.margin, 1.0, None))
}

/// `Σⱼ rank(Aⱼ, Bⱼ, Bₖ) + Σⱼ rank(Bⱼ, Aⱼ, Aₗ)` using rows 0 and 1 of `draw`.
pub fn pair_loss_bidirectional(
    batch_a: &[EmbeddingVec],
    batch_b: &[EmbeddingVec],
    draw: &ImposterDraw,
    prm: &MarginRankingParams,
) -> Result<f64> {
    if draw.indices.len() < 2 {
        return Err(Error::Config("bidirectional loss needs two draw rows".into()));
    }
    let a: Vec<Vec<f32>> = batch_a.iter().map(|e| e.values.clone()).collect();
    let b: Vec<Vec<f32>> = batch_b.iter().map(|e| e.values.clone()).collect();
    pair_loss_generic(&a, &b, draw.term(0), draw.term(1), prm)
}

/// Weighted scenario loss; when `grads` is given, accumulates the gradient
/// with respect to every participating embedding.
pub fn scenario_loss_generic<T: Real>(
    spec: &ScenarioSpec,
    emb: &BTreeMap<Modality, Vec<Vec<T>>>,
    draw: &ImposterDraw,
    prm: &MarginRankingParams,
    mut grads: Option<&mut EmbeddingGrads<T>>,
) -> Result<f64> {
    if draw.indices.len() < spec.directed_terms() {
        return Err(Error::Config(format!(
            "scenario {} needs {} draw rows, got {}",
            spec.name,
            spec.directed_terms(),
            draw.indices.len()
        )));
    }
    let get = |m: Modality| emb.get(&m).ok_or(Error::MissingModality(m.prefix()));
    if let Some(g) = grads.as_deref_mut() {
        for m in spec.modalities() {
            let e = get(m)?;
            g.entry(m)
                .or_insert_with(|| e.iter().map(|v| vec![T::zero(); v.len()]).collect());
        }
    }
    let mut total = 0.0;
    for (t, term) in spec.terms.iter().enumerate() {
        let (a, b) = (get(term.a)?, get(term.b)?);
        let (imp_b, imp_a) = (draw.term(2 * t), draw.term(2 * t + 1));
        check_batch(a, b, &[imp_b, imp_a])?;
        let loss = match grads.as_deref_mut() {
            None => {
                directed(a, b, imp_b, prm.margin, term.weight, None)
                    + directed(b, a, imp_a, prm.margin, term.weight, None)
            }
            Some(g) => {
                let mut ga = g.remove(&term.a).expect("grad buffer");
                let mut gb = g.remove(&term.b).expect("grad buffer");
                let l = directed(a, b, imp_b, prm.margin, term.weight, Some((&mut ga, &mut gb)))
                    + directed(b, a, imp_a, prm.margin, term.weight, Some((&mut gb, &mut ga)));
                g.insert(term.a, ga);
                g.insert(term.b, gb);
                l
            }
        };
        total += term.weight * loss;
    }
    Ok(total)
}

/// Weighted sum of bidirectional pair losses for a scenario.
pub fn scenario_loss(
    spec: &ScenarioSpec,
    embeddings: &BTreeMap<Modality, Vec<EmbeddingVec>>,
    draw: &ImposterDraw,
    prm: &MarginRankingParams,
) -> Result<f64> {
    let emb: BTreeMap<Modality, Vec<Vec<f32>>> = embeddings
        .iter()
        .map(|(m, v)| (*m, v.iter().map(|e| e.values.clone()).collect()))
        .collect();
    scenario_loss_generic(spec, &emb, draw, prm, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn ev(values: Vec<f32>) -> EmbeddingVec {
        EmbeddingVec {
            values,
            modality: Modality::Image,
        }
    }

    #[test]
    fn rank_loss_cases() {
        let prm = MarginRankingParams::default();
        // s(a,p)=5, s(a,i)=3
        let a = ev(vec![1.0, 0.0]);
        assert_eq!(rank_loss(&a, &ev(vec![5.0, 1.0]), &ev(vec![3.0, 2.0]), &prm).unwrap(), 0.0);
        // equal similarities
        assert_eq!(rank_loss(&a, &ev(vec![2.0, 1.0]), &ev(vec![2.0, -4.0]), &prm).unwrap(), 1.0);
        // 1 - 0.25 + 0.5, exactly representable
        let l = rank_loss(&a, &ev(vec![0.25, 0.0]), &ev(vec![0.5, 0.0]), &prm).unwrap();
        assert_eq!(l, 1.25);
        assert_eq!(rank_loss_values(&[1.0f64], &[0.2], &[0.5], &prm).unwrap(), 1.3);
        assert!(rank_loss_values(&[f64::NAN], &[1.0], &[1.0], &prm).unwrap().is_nan());
        assert!(matches!(
            rank_loss(&a, &ev(vec![1.0]), &ev(vec![1.0, 0.0]), &prm),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn scenario_tables() {
        let heih = ScenarioSpec::new(ScenarioName::HEIH);
        assert_eq!(heih.terms.iter().map(|t| t.weight).collect::<Vec<_>>(), vec![1.0, 1.0, 5.0]);
        assert_eq!(heih.modalities().len(), 3);
        assert_eq!(ScenarioSpec::new(ScenarioName::EH).modalities(), vec![Modality::AudioE, Modality::AudioH]);
        for n in ScenarioName::ALL {
            assert_eq!(n.as_str().parse::<ScenarioName>().unwrap(), n);
        }
        assert!(matches!("e-x".parse::<ScenarioName>(), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn imposters_b2_and_determinism() {
        let d = sample_imposters(2, 3, 5).unwrap();
        for row in &d.indices {
            assert_eq!(row, &vec![1, 0]);
        }
        assert_eq!(sample_imposters(16, 4, 9).unwrap(), sample_imposters(16, 4, 9).unwrap());
        assert!(matches!(sample_imposters(1, 1, 0), Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn directions_parse_and_key() {
        for d in Direction::all() {
            assert_eq!(d.key().parse::<Direction>().unwrap(), d);
        }
        assert!("e2e".parse::<Direction>().is_err());
    }

    #[test]
    fn missing_modality_is_an_error() {
        let spec = ScenarioSpec::new(ScenarioName::EI);
        let mut emb = BTreeMap::new();
        emb.insert(Modality::AudioE, vec![vec![1.0f64], vec![0.0]]);
        let draw = sample_imposters(2, 2, 0).unwrap();
        assert!(matches!(
            scenario_loss_generic(&spec, &emb, &draw, &MarginRankingParams::default(), None),
            Err(Error::MissingModality("image"))
        ));
    }

    fn random_embeddings(spec: &ScenarioSpec, b: usize, d: usize, s: u64) -> BTreeMap<Modality, Vec<Vec<f64>>> {
        let mut rng = seed::rng(s, "test.emb", &[]);
        spec.modalities()
            .into_iter()
            .map(|m| (m, (0..b).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()))
            .collect()
    }

    #[test]
    fn matches_double_loop() {
        let prm = MarginRankingParams::default();
        for name in ScenarioName::ALL {
            let spec = ScenarioSpec::new(name);
            let emb = random_embeddings(&spec, 4, 3, 1);
            let draw = sample_imposters(4, spec.directed_terms(), 2).unwrap();
            let mut expected = 0.0;
            for (t, term) in spec.terms.iter().enumerate() {
                let (a, b) = (&emb[&term.a], &emb[&term.b]);
                for j in 0..4 {
                    let kb = draw.indices[2 * t][j];
                    let ka = draw.indices[2 * t + 1][j];
                    let r1 = rank_loss_values(&a[j], &b[j], &b[kb], &prm).unwrap();
                    let r2 = rank_loss_values(&b[j], &a[j], &a[ka], &prm).unwrap();
                    expected += term.weight * (r1 + r2);
                }
            }
            let got = scenario_loss_generic(&spec, &emb, &draw, &prm, None).unwrap();
            assert!((got - expected).abs() < 1e-12, "{name}: {got} vs {expected}");
        }
    }

    #[test]
    fn composite_is_sum_of_parts_under_shared_draws() {
        let prm = MarginRankingParams::default();
        let eih = ScenarioSpec::new(ScenarioName::EIH);
        let emb = random_embeddings(&eih, 16, 8, 3);
        let draw = sample_imposters(16, 4, 4).unwrap();
        let first = ImposterDraw {
            batch_size: 16,
            indices: draw.indices[..2].to_vec(),
        };
        let second = ImposterDraw {
            batch_size: 16,
            indices: draw.indices[2..].to_vec(),
        };
        let whole = scenario_loss_generic(&eih, &emb, &draw, &prm, None).unwrap();
        let ei = scenario_loss_generic(&ScenarioSpec::new(ScenarioName::EI), &emb, &first, &prm, None).unwrap();
        let hi = scenario_loss_generic(&ScenarioSpec::new(ScenarioName::HI), &emb, &second, &prm, None).unwrap();
        assert!((whole - (ei + hi)).abs() < 1e-12);
    }

    #[test]
    fn embedding_gradients_match_central_differences() {
        let prm = MarginRankingParams::default();
        let h = 1e-6;
        for name in ScenarioName::ALL {
            let spec = ScenarioSpec::new(name);
            let mut emb = random_embeddings(&spec, 6, 5, 5);
            let draw = sample_imposters(6, spec.directed_terms(), 6).unwrap();
            let mut grads = BTreeMap::new();
            scenario_loss_generic(&spec, &emb, &draw, &prm, Some(&mut grads)).unwrap();
            for m in spec.modalities() {
                for j in 0..6 {
                    for c in 0..5 {
                        let x = emb[&m][j][c];
                        emb.get_mut(&m).unwrap()[j][c] = x + h;
                        let up = scenario_loss_generic(&spec, &emb, &draw, &prm, None).unwrap();
                        emb.get_mut(&m).unwrap()[j][c] = x - h;
                        let down = scenario_loss_generic(&spec, &emb, &draw, &prm, None).unwrap();
                        emb.get_mut(&m).unwrap()[j][c] = x;
                        let numeric = (up - down) / (2.0 * h);
                        assert!((numeric - grads[&m][j][c]).abs() < 1e-6, "{name} {m:?}[{j}][{c}]");
                    }
                }
            }
        }
    }

    #[test]
    fn imposters_are_uniform_over_other_items() {
        let b = 8;
        let draws = 100_000;
        let mut counts = vec![vec![0usize; b]; b];
        let d = sample_imposters(b, draws, 11).unwrap();
        for row in &d.indices {
            for (j, &k) in row.iter().enumerate() {
                counts[j][k] += 1;
            }
        }
        let p = 1.0 / (b - 1) as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for (j, row) in counts.iter().enumerate() {
            assert_eq!(row[j], 0);
            for (k, &n) in row.iter().enumerate() {
                if k != j {
                    assert!((n as f64 - draws as f64 * p).abs() < 5.0 * sd, "({j},{k}): {n}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn permutation_equivariance(s in any::<u64>(), b in 2usize..10, which in 0usize..5) {
            let spec = ScenarioSpec::new(ScenarioName::ALL[which]);
            let prm = MarginRankingParams::default();
            let emb = random_embeddings(&spec, b, 4, s);
            let draw = sample_imposters(b, spec.directed_terms(), s ^ 1).unwrap();
            let mut perm: Vec<usize> = (0..b).collect();
            perm.shuffle(&mut seed::rng(s, "perm", &[]));
            let moved: BTreeMap<Modality, Vec<Vec<f64>>> = emb
                .iter()
                .map(|(m, rows)| {
                    let mut out = rows.clone();
                    for (j, r) in rows.iter().enumerate() {
                        out[perm[j]] = r.clone();
                    }
                    (*m, out)
                })
                .collect();
            let mut g0 = BTreeMap::new();
            let mut g1 = BTreeMap::new();
            let l0 = scenario_loss_generic(&spec, &emb, &draw, &prm, Some(&mut g0)).unwrap();
            let l1 = scenario_loss_generic(&spec, &moved, &draw.permuted(&perm), &prm, Some(&mut g1)).unwrap();
            prop_assert!((l0 - l1).abs() < 1e-9);
            prop_assert!(l0 >= 0.0);
            for m in spec.modalities() {
                for j in 0..b {
                    for c in 0..4 {
                        prop_assert!((g0[&m][j][c] - g1[&m][perm[j]][c]).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
