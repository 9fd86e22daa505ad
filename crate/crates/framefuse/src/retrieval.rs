//! Similarity matrices, the symmetric contrastive objective, retrieval
//! metrics (R@K, MdR, MnR, RSum) and the per-video min/max/mean-pool
//! similarity audit.
//!
//! Ranking uses the optimistic tie policy rank = 1 + #(strictly
//! greater); ties therefore favor the query. MdR of an even number of
//! queries is the mean of the two middle ranks.

use crate::error::{Error, Result};
use crate::exec::{map_range, Parallelism};
use crate::gates::{mean_pool, FrameFeatures};
use crate::tape::{Tape, Var};
use crate::tensor::{Matrix, Vector};

/// Text-video score matrix: rows are text queries, columns are videos.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub scores: Matrix,
}

impl SimilarityMatrix {
    pub fn queries(&self) -> usize {
        self.scores.rows()
    }

    pub fn items(&self) -> usize {
        self.scores.cols()
    }

    /// Swapped retrieval direction (video-to-text).
    pub fn transposed(&self) -> SimilarityMatrix {
        SimilarityMatrix {
            scores: self.scores.transpose(),
        }
    }
}

/// Pairwise scores between row embeddings: cosine when `normalize` is
/// set (errors on a near-zero row), raw dot products otherwise.
pub fn similarity_matrix(
    texts: &Matrix,
    videos: &Matrix,
    normalize: bool,
    mode: Parallelism,
) -> Result<SimilarityMatrix> {
    if texts.cols() != videos.cols() {
        return Err(Error::shape(
            "similarity_matrix",
            format!("Qx{} vs Mx{}", texts.cols(), texts.cols()),
            format!("Qx{} vs Mx{}", texts.cols(), videos.cols()),
        ));
    }
    let normalized_rows = |m: &Matrix| -> Result<Matrix> {
        let mut out = m.clone();
        for r in 0..m.rows() {
            let norm = m.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= 1e-12 {
                return Err(Error::DegenerateVector { norm });
            }
            for x in &mut out.data_mut()[r * m.cols()..(r + 1) * m.cols()] {
                *x /= norm;
            }
        }
        Ok(out)
    };
    let (t, v) = if normalize {
        (normalized_rows(texts)?, normalized_rows(videos)?)
    } else {
        (texts.clone(), videos.clone())
    };
    let cols = v.rows();
    let rows: Vec<Vec<f64>> = map_range(mode, t.rows(), |q| {
        let tq = t.row_slice(q);
        (0..cols)
            .map(|m| {
                let vm = v.row_slice(m);
                tq.iter().zip(vm).map(|(a, b)| a * b).sum()
            })
            .collect()
    });
    let data = rows.into_iter().flatten().collect::<Vec<f64>>();
    Ok(SimilarityMatrix {
        scores: Matrix::from_raw(t.rows(), cols, data),
    })
}

// ---- contrastive objective ---------------------------------------------------

/// Symmetric InfoNCE over a BxB in-batch score node: the mean of the
/// row-wise and column-wise cross-entropies of softmax(S/tau) against
/// the diagonal, halved. `tau` is a 1x1 node so a learnable
/// temperature can flow gradients.
pub fn contrastive_loss_node(tape: &Tape, scores: Var, tau: Var) -> Result<Var> {
    let (rows, cols) = tape.shape(scores);
    if rows != cols {
        return Err(Error::shape(
            "contrastive_loss",
            "square BxB matrix",
            format!("{rows}x{cols}"),
        ));
    }
    let tau_value = tape.value(tau).scalar();
    if tau_value <= 0.0 {
        return Err(Error::InvalidTemperature(tau_value));
    }
    let inv_tau = tape.recip(tau)?;
    let scaled = tape.mul_scalar_node(scores, inv_tau)?;

    let row_lse = tape.logsumexp_rows(scaled);
    let diag = tape.diag(scaled)?;
    let row_ce = tape.sub(row_lse, diag)?;
    let row_mean = tape.mean_all(row_ce);

    let transposed = tape.transpose(scaled);
    let col_lse = tape.logsumexp_rows(transposed);
    let col_diag = tape.diag(transposed)?;
    let col_ce = tape.sub(col_lse, col_diag)?;
    let col_mean = tape.mean_all(col_ce);

    let total = tape.add(row_mean, col_mean)?;
    Ok(tape.scale(total, 0.5))
}

/// Contrastive loss of a fixed score matrix (diagonal = matched pairs).
pub fn contrastive_loss(scores: &SimilarityMatrix, tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::InvalidTemperature(tau));
    }
    let tape = Tape::new();
    let s = tape.constant(scores.scores.clone());
    let t = tape.scalar_constant(tau);
    let loss = contrastive_loss_node(&tape, s, t)?;
    Ok(tape.value(loss).scalar())
}

// ---- retrieval metrics ---------------------------------------------------------

/// Recall/rank metrics for one retrieval direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    /// Percentage of queries whose match ranks in the top 1 / 5 / 10.
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    /// Median rank (mean of the two middle ranks for even counts).
    pub median_rank: f64,
    pub mean_rank: f64,
    /// R@1 + R@5 + R@10.
    pub rsum: f64,
}

impl RetrievalReport {
    /// CSV row under [`REPORT_CSV_HEADER`]; percentages and ranks with
    /// one decimal.
    pub fn csv_row(&self, direction: &str) -> String {
        format!(
            "{direction},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1}",
            self.r_at_1, self.r_at_5, self.r_at_10, self.median_rank, self.mean_rank, self.rsum
        )
    }
}

pub const REPORT_CSV_HEADER: &str = "direction,R@1,R@5,R@10,MdR,MnR,RSum";

/// Two-direction report serialized as CSV (T2V then V2T).
pub fn report_csv(t2v: &RetrievalReport, v2t: &RetrievalReport) -> String {
    format!(
        "{REPORT_CSV_HEADER}\n{}\n{}\n",
        t2v.csv_row("T2V"),
        v2t.csv_row("V2T")
    )
}

/// Rank of each query's ground-truth column under the strict-greater
/// tie policy.
pub fn ranks(scores: &SimilarityMatrix, ground_truth: &[usize], mode: Parallelism) -> Result<Vec<usize>> {
    let q = scores.queries();
    let m = scores.items();
    if ground_truth.len() != q {
        return Err(Error::MissingGroundTruth(format!(
            "{} queries but {} ground-truth entries",
            q,
            ground_truth.len()
        )));
    }
    if let Some((i, bad)) = ground_truth.iter().enumerate().find(|(_, c)| **c >= m) {
        return Err(Error::MissingGroundTruth(format!(
            "query {i} maps to column {bad}, matrix has {m} columns"
        )));
    }
    Ok(map_range(mode, q, |i| {
        let row = scores.scores.row_slice(i);
        let target = row[ground_truth[i]];
        1 + row.iter().filter(|s| **s > target).count()
    }))
}

/// Computes R@{1,5,10}, MdR, MnR and RSum for one direction.
pub fn rank_metrics(
    scores: &SimilarityMatrix,
    ground_truth: &[usize],
    mode: Parallelism,
) -> Result<RetrievalReport> {
    let ranks = ranks(scores, ground_truth, mode)?;
    Ok(report_from_ranks(&ranks))
}

/// Builds the report from raw ranks (1-based).
pub fn report_from_ranks(ranks: &[usize]) -> RetrievalReport {
    let q = ranks.len() as f64;
    let recall_at = |k: usize| 100.0 * ranks.iter().filter(|r| **r <= k).count() as f64 / q;
    let r_at_1 = recall_at(1);
    let r_at_5 = recall_at(5);
    let r_at_10 = recall_at(10);

    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let median_rank = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2] as f64
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) as f64 / 2.0
    };
    let mean_rank = sorted.iter().sum::<usize>() as f64 / q;

    RetrievalReport {
        r_at_1,
        r_at_5,
        r_at_10,
        median_rank,
        mean_rank,
        rsum: r_at_1 + r_at_5 + r_at_10,
    }
}

// ---- similarity audit -----------------------------------------------------------

/// Min/max per-frame similarity and the mean-pooled similarity for one
/// caption-video pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityAudit {
    pub min_sim: f64,
    pub max_sim: f64,
    pub meanp_sim: f64,
}

/// Similarities between a caption and each masked-in frame. Cosine
/// when `normalize` is set, raw dots otherwise.
pub fn per_frame_similarities(text: &Vector, v: &FrameFeatures, normalize: bool) -> Result<Vec<f64>> {
    if text.len() != v.channels() {
        return Err(Error::shape(
            "per_frame_similarities",
            format!("text of length {}", v.channels()),
            format!("text of length {}", text.len()),
        ));
    }
    let text = if normalize {
        text.l2_normalized()?
    } else {
        text.clone()
    };
    let mut sims = Vec::with_capacity(v.valid_count());
    for (r, keep) in v.mask().iter().enumerate() {
        if !keep {
            continue;
        }
        let row = v.features().row_slice(r);
        let mut dot: f64 = row.iter().zip(text.data()).map(|(a, b)| a * b).sum();
        if normalize {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= 1e-12 {
                return Err(Error::DegenerateVector { norm });
            }
            dot /= norm;
        }
        sims.push(dot);
    }
    Ok(sims)
}

/// One audit row: per-frame similarity extremes plus the mean-pooled
/// similarity. In the unnormalized case the mean-pooled similarity is
/// the arithmetic mean of the per-frame similarities, hence always
/// between min and max.
pub fn betweenness_audit(text: &Vector, v: &FrameFeatures, normalize: bool) -> Result<SimilarityAudit> {
    let sims = per_frame_similarities(text, v, normalize)?;
    let min_sim = sims.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_sim = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pooled = mean_pool(v)?;
    let meanp_sim = if normalize {
        let t = text.l2_normalized()?;
        let p = pooled.vector.l2_normalized()?;
        t.dot(&p)?
    } else {
        text.dot(&pooled.vector)?
    };
    Ok(SimilarityAudit {
        min_sim,
        max_sim,
        meanp_sim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_raw(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn identical_unit_vectors_score_one() {
        let t = Matrix::new(1, 2, vec![0.6, 0.8]).unwrap();
        let s = similarity_matrix(&t, &t, true, Parallelism::Sequential).unwrap();
        assert!((s.scores.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_vectors_score_zero() {
        let t = Matrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let v = Matrix::new(1, 2, vec![0.0, 1.0]).unwrap();
        let s = similarity_matrix(&t, &v, true, Parallelism::Sequential).unwrap();
        assert_eq!(s.scores.get(0, 0), 0.0);
    }

    #[test]
    fn similarity_matches_dot_loop_oracle() {
        let t = random_matrix(5, 8, 1);
        let v = random_matrix(7, 8, 2);
        let s = similarity_matrix(&t, &v, false, Parallelism::Sequential).unwrap();
        for q in 0..5 {
            for m in 0..7 {
                let expected: f64 = (0..8).map(|c| t.get(q, c) * v.get(m, c)).sum();
                assert!((s.scores.get(q, m) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_norm_row_with_normalize_errors() {
        let t = Matrix::zeros(1, 4);
        let v = random_matrix(2, 4, 3);
        assert!(matches!(
            similarity_matrix(&t, &v, true, Parallelism::Sequential),
            Err(Error::DegenerateVector { .. })
        ));
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let t = random_matrix(3, 6, 4);
        let v = random_matrix(4, 6, 5);
        let base = similarity_matrix(&t, &v, true, Parallelism::Sequential).unwrap();
        for c in [1e-3, 1.0, 1e3] {
            let scaled = similarity_matrix(&t, &v.scaled(c), true, Parallelism::Sequential).unwrap();
            assert!(base.scores.max_abs_diff(&scaled.scores) <= 1e-12);
        }
    }

    #[test]
    fn perfect_separation_drives_loss_to_zero() {
        let mut scores = Matrix::zeros(4, 4);
        for i in 0..4 {
            scores.set(i, i, 1000.0);
        }
        let loss = contrastive_loss(&SimilarityMatrix { scores }, 1.0).unwrap();
        assert!(loss.abs() < 1e-9, "{loss}");
    }

    #[test]
    fn uniform_scores_give_ln_b() {
        let scores = Matrix::from_raw(4, 4, vec![0.7; 16]);
        let loss = contrastive_loss(&SimilarityMatrix { scores }, 1.0).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn contrastive_matches_two_direction_ce_oracle() {
        let scores = random_matrix(3, 3, 6);
        let tau = 0.5;
        let loss = contrastive_loss(
            &SimilarityMatrix {
                scores: scores.clone(),
            },
            tau,
        )
        .unwrap();

        // Explicit softmax cross-entropy in both directions.
        let ce = |get: &dyn Fn(usize, usize) -> f64| -> f64 {
            let mut total = 0.0;
            for i in 0..3 {
                let row: Vec<f64> = (0..3).map(|j| get(i, j) / tau).collect();
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
                let p = (row[i] - m).exp() / z;
                total -= p.ln();
            }
            total / 3.0
        };
        let row_ce = ce(&|i, j| scores.get(i, j));
        let col_ce = ce(&|i, j| scores.get(j, i));
        let expected = 0.5 * (row_ce + col_ce);
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn non_positive_temperature_is_rejected() {
        let scores = Matrix::zeros(2, 2);
        assert!(matches!(
            contrastive_loss(&SimilarityMatrix { scores }, 0.0),
            Err(Error::InvalidTemperature(_))
        ));
    }

    #[test]
    fn diagonal_argmax_report() {
        let scores = Matrix::new(2, 2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let report = rank_metrics(
            &SimilarityMatrix { scores },
            &[0, 1],
            Parallelism::Sequential,
        )
        .unwrap();
        assert_eq!(report.r_at_1, 100.0);
        assert_eq!(report.median_rank, 1.0);
        assert_eq!(report.mean_rank, 1.0);
        assert_eq!(report.rsum, 300.0);
    }

    #[test]
    fn ranks_one_two_seven_report() {
        // 3 queries over 10 items with correct columns at ranks 1, 2, 7.
        let mut scores = Matrix::zeros(3, 10);
        scores.set(0, 0, 1.0); // rank 1
        scores.set(1, 1, 0.5);
        scores.set(1, 3, 0.9); // one higher -> rank 2
        scores.set(2, 2, 0.2);
        for j in 4..10 {
            scores.set(2, j, 0.3 + j as f64 * 0.01); // six higher -> rank 7
        }
        let report = rank_metrics(
            &SimilarityMatrix { scores },
            &[0, 1, 2],
            Parallelism::Sequential,
        )
        .unwrap();
        assert!((report.r_at_1 - 100.0 / 3.0).abs() < 1e-12);
        assert!((report.r_at_5 - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.r_at_10, 100.0);
        assert_eq!(report.median_rank, 2.0);
        assert!((report.mean_rank - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.rsum, 200.0);
        assert_eq!(report.csv_row("T2V"), "T2V,33.3,66.7,100.0,2.0,3.3,200.0");
    }

    #[test]
    fn all_equal_scores_rank_one_under_tie_policy() {
        let scores = Matrix::from_raw(4, 4, vec![0.5; 16]);
        let report = rank_metrics(
            &SimilarityMatrix { scores },
            &[0, 1, 2, 3],
            Parallelism::Sequential,
        )
        .unwrap();
        assert_eq!(report.r_at_1, 100.0);
    }

    #[test]
    fn missing_ground_truth_is_an_error() {
        let scores = Matrix::zeros(2, 3);
        let s = SimilarityMatrix { scores };
        assert!(matches!(
            rank_metrics(&s, &[0], Parallelism::Sequential),
            Err(Error::MissingGroundTruth(_))
        ));
        assert!(matches!(
            rank_metrics(&s, &[0, 3], Parallelism::Sequential),
            Err(Error::MissingGroundTruth(_))
        ));
    }

    #[test]
    fn median_of_even_count_averages_middle_ranks() {
        let report = report_from_ranks(&[1, 2, 3, 10]);
        assert_eq!(report.median_rank, 2.5);
    }

    #[test]
    fn identical_frames_collapse_the_audit() {
        let row = vec![0.2, -0.4, 0.6];
        let data = [row.clone(), row.clone(), row].concat();
        let v = FrameFeatures::full(Matrix::from_raw(3, 3, data)).unwrap();
        let text = Vector::from_raw(vec![1.0, 0.5, -0.5]);
        let audit = betweenness_audit(&text, &v, false).unwrap();
        assert!((audit.min_sim - audit.max_sim).abs() < 1e-12);
        assert!((audit.meanp_sim - audit.min_sim).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_meanp_is_the_mean_of_per_frame_dots() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = FrameFeatures::full(random_matrix(6, 9, 7)).unwrap();
        let text = Vector::from_raw((0..9).map(|_| rng.random_range(-1.0..1.0)).collect());
        let sims = per_frame_similarities(&text, &v, false).unwrap();
        let mean: f64 = sims.iter().sum::<f64>() / sims.len() as f64;
        let audit = betweenness_audit(&text, &v, false).unwrap();
        assert!((audit.meanp_sim - mean).abs() < 1e-12);
        assert!(audit.min_sim <= audit.meanp_sim && audit.meanp_sim <= audit.max_sim);
    }

    #[test]
    fn report_csv_header_is_stable() {
        let report = report_from_ranks(&[1, 1]);
        let csv = report_csv(&report, &report);
        assert!(csv.starts_with("direction,R@1,R@5,R@10,MdR,MnR,RSum\n"));
        assert!(csv.contains("\nT2V,"));
        assert!(csv.contains("\nV2T,"));
    }
}
