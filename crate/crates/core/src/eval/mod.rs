//! Sequence agreement metrics, positional-variance tables and the timing
//! benchmark.

mod benchmark;

pub use benchmark::{
    benchmark, summarise, BenchmarkConfig, BenchmarkRow, BenchmarkSummary, EbmSettings, Solver,
};

use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::error::{Result, VebmError};
use crate::types::EventSequence;

fn check_lengths(a: &EventSequence, b: &EventSequence) -> Result<()> {
    if a.len() != b.len() {
        return Err(VebmError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Kendall's tau-a over the relative order of every pair of events.
pub fn kendalls_tau(a: &EventSequence, b: &EventSequence) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len();
    if n < 2 {
        return Err(VebmError::InvalidArgument(
            "Kendall's tau needs at least 2 events".into(),
        ));
    }
    let (pa, pb) = (a.positions(), b.positions());
    let mut score: i64 = 0;
    for u in 0..n {
        for v in u + 1..n {
            let s = (pa[u] < pa[v]) == (pb[u] < pb[v]);
            score += if s { 1 } else { -1 };
        }
    }
    Ok(score as f64 / (n * (n - 1) / 2) as f64)
}

/// Fraction of positions holding the same event in both sequences.
pub fn fraction_correct(a: &EventSequence, b: &EventSequence) -> Result<f64> {
    check_lengths(a, b)?;
    let same = a
        .order()
        .iter()
        .zip(b.order())
        .filter(|(x, y)| x == y)
        .count();
    Ok(same as f64 / a.len() as f64)
}

/// One cell of a positional-variance diagram.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagramCell {
    /// Row of the diagram: the event's position in the inferred sequence.
    pub row: usize,
    pub event: usize,
    pub position: usize,
    pub frequency: f64,
    /// Set where the true sequence places `event` at `position`.
    pub truth: bool,
}

/// Cells of `f[event][position]` listed row by row with events in the order
/// of `inferred`, each row covering every position.
pub fn positional_variance_diagram(
    f: &Array2<f64>,
    inferred: &EventSequence,
    truth: Option<&EventSequence>,
) -> Result<Vec<DiagramCell>> {
    let n = inferred.len();
    if f.dim() != (n, n) {
        return Err(VebmError::DimensionMismatch(format!(
            "frequency matrix {:?} for {n} events",
            f.dim()
        )));
    }
    if let Some(t) = truth {
        check_lengths(inferred, t)?;
    }
    if let Some((e, s)) = f
        .sum_axis(Axis(1))
        .iter()
        .enumerate()
        .find(|(_, s)| !((*s - 1.0).abs() <= 1e-9))
    {
        return Err(VebmError::UnnormalisedRows(format!(
            "event {e} sums to {s}"
        )));
    }
    if f.iter().any(|v| *v < 0.0) {
        return Err(VebmError::UnnormalisedRows("negative frequency".into()));
    }
    let truth_pos = truth.map(EventSequence::positions);
    let mut cells = Vec::with_capacity(n * n);
    for (row, &event) in inferred.order().iter().enumerate() {
        for position in 0..n {
            cells.push(DiagramCell {
                row,
                event,
                position,
                frequency: f[[event, position]],
                truth: truth_pos.as_ref().is_some_and(|p| p[event] == position),
            });
        }
    }
    Ok(cells)
}

/// Largest frequency away from the diagonal of a diagram.
pub fn max_off_diagonal(cells: &[DiagramCell]) -> f64 {
    cells
        .iter()
        .filter(|c| c.row != c.position)
        .map(|c| c.frequency)
        .fold(0.0, f64::max)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of the average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(VebmError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(VebmError::InvalidArgument(
            "correlation needs at least 2 points".into(),
        ));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(VebmError::InvalidArgument(
            "correlation undefined for a constant input".into(),
        ));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Median of the finite values, `None` if there are none.
pub fn median(v: &[f64]) -> Option<f64> {
    let mut w: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if w.is_empty() {
        return None;
    }
    w.sort_by(f64::total_cmp);
    let m = w.len() / 2;
    Some(if w.len() % 2 == 1 {
        w[m]
    } else {
        0.5 * (w[m - 1] + w[m])
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(VebmError::InvalidArgument(
            "slope needs two or more paired points".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(VebmError::InvalidArgument(
            "log-log slope needs positive values".into(),
        ));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[usize]) -> EventSequence {
        EventSequence::new(v.to_vec()).unwrap()
    }

    #[test]
    fn tau_extremes() {
        let a = seq(&[3, 1, 0, 2]);
        assert_eq!(kendalls_tau(&a, &a).unwrap(), 1.0);
        assert_eq!(kendalls_tau(&a, &seq(&[2, 0, 1, 3])).unwrap(), -1.0);
    }

    #[test]
    fn adjacent_transposition_of_ten() {
        let a = EventSequence::identity(10);
        let mut b = a.clone();
        b.swap_positions(4, 5);
        let t = kendalls_tau(&a, &b).unwrap();
        assert!((t - (1.0 - 4.0 / 90.0)).abs() < 1e-15);
        assert_eq!(fraction_correct(&a, &b).unwrap(), 0.8);
    }

    #[test]
    fn fraction_extremes() {
        let a = seq(&[0, 1, 2]);
        assert_eq!(fraction_correct(&a, &a).unwrap(), 1.0);
        assert_eq!(fraction_correct(&a, &seq(&[1, 2, 0])).unwrap(), 0.0);
    }

    #[test]
    fn metrics_reject_mismatches() {
        assert!(kendalls_tau(&seq(&[0, 1]), &seq(&[0, 1, 2])).is_err());
        assert!(fraction_correct(&seq(&[0, 1]), &seq(&[0, 1, 2])).is_err());
        assert!(kendalls_tau(&seq(&[0]), &seq(&[0])).is_err());
    }

    #[test]
    fn identity_diagram_is_diagonal() {
        let s = seq(&[2, 0, 1]);
        let f = s.to_matrix().t().to_owned();
        let cells = positional_variance_diagram(&f, &s, Some(&s)).unwrap();
        assert_eq!(cells.len(), 9);
        for c in &cells {
            assert_eq!(c.frequency, if c.row == c.position { 1.0 } else { 0.0 });
            assert_eq!(c.truth, c.row == c.position);
        }
        assert_eq!(max_off_diagonal(&cells), 0.0);
    }

    #[test]
    fn uniform_diagram() {
        let f = Array2::from_elem((4, 4), 0.25);
        let cells = positional_variance_diagram(&f, &EventSequence::identity(4), None).unwrap();
        assert!(cells.iter().all(|c| c.frequency == 0.25 && !c.truth));
    }

    #[test]
    fn unnormalised_rows_rejected() {
        let f = Array2::from_elem((2, 2), 0.4);
        assert!(matches!(
            positional_variance_diagram(&f, &EventSequence::identity(2), None),
            Err(VebmError::UnnormalisedRows(_))
        ));
    }

    #[test]
    fn spearman_known_values() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &[10.0, 20.0, 30.0, 40.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn median_and_slope() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, f64::NAN, 1.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        let x = [1.0, 2.0, 4.0];
        let y = [3.0, 12.0, 48.0];
        assert!((loglog_slope(&x, &y).unwrap() - 2.0).abs() < 1e-12);
    }
}
