use crate::error::{ensure_finite, Error, Result};
use crate::nn::Matrix;

/// Majority vote over the `k` nearest training rows by Euclidean distance.
/// `k` must be odd, so votes cannot tie; equal distances rank the smaller
/// training index first.
pub fn knn_baseline(
    train: &Matrix,
    labels: &[u8],
    test: &Matrix,
    k: usize,
) -> Result<Vec<u8>> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::invalid(format!("k = {k} must be odd and positive")));
    }
    if labels.len() != train.rows() {
        return Err(Error::shape(format!(
            "{} labels for {} training rows",
            labels.len(),
            train.rows()
        )));
    }
    if k > train.rows() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} training rows",
            train.rows()
        )));
    }
    if test.cols() != train.cols() {
        return Err(Error::shape(format!(
            "test rows have {} features, training rows {}",
            test.cols(),
            train.cols()
        )));
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(Error::invalid(format!("label[{i}] is not 0 or 1")));
    }
    ensure_finite(train.data())?;
    ensure_finite(test.data())?;
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(train.rows());
    let mut out = Vec::with_capacity(test.rows());
    for q in 0..test.rows() {
        let query = test.row(q);
        dist.clear();
        dist.extend((0..train.rows()).map(|i| {
            let d: f64 = train.row(i).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, i)
        }));
        let nearest = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        dist.select_nth_unstable_by(k - 1, nearest);
        let ones = dist[..k].iter().filter(|&&(_, i)| labels[i] == 1).count();
        out.push((2 * ones > k) as u8);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_with_k1() {
        let train = Matrix::from_rows(&[[0.0, 0.0], [5.0, 5.0], [1.0, 0.0]]).unwrap();
        let test = Matrix::from_rows(&[[5.0, 5.0], [0.9, 0.1]]).unwrap();
        assert_eq!(knn_baseline(&train, &[0, 1, 0], &test, 1).unwrap(), vec![1, 0]);
    }

    #[test]
    fn distance_ties_prefer_lower_index() {
        let train = Matrix::from_rows(&[[1.0], [-1.0], [3.0]]).unwrap();
        let test = Matrix::from_rows(&[[0.0]]).unwrap();
        assert_eq!(knn_baseline(&train, &[1, 0, 0], &test, 1).unwrap(), vec![1]);
        assert_eq!(knn_baseline(&train, &[0, 1, 0], &test, 1).unwrap(), vec![0]);
    }

    #[test]
    fn errors() {
        let train = Matrix::zeros(3, 1);
        let test = Matrix::zeros(1, 1);
        assert!(knn_baseline(&train, &[0, 1, 0], &test, 5).is_err());
        assert!(knn_baseline(&train, &[0, 1, 0], &test, 2).is_err());
        assert!(knn_baseline(&train, &[0, 1], &test, 1).is_err());
        assert!(knn_baseline(&train, &[0, 1, 0], &Matrix::zeros(1, 2), 1).is_err());
    }
}
