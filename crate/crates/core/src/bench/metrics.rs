use crate::error::{Error, Result};
use crate::ingest::{Class, N_CLASSES};

fn check(predictions: &[Class], labels: &[Class]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy(predictions: &[Class], labels: &[Class]) -> Result<f64> {
    check(predictions, labels)?;
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean per-class recall over the classes present in `labels`.
pub fn macro_accuracy(predictions: &[Class], labels: &[Class]) -> Result<f64> {
    check(predictions, labels)?;
    let mut hits = [0usize; N_CLASSES];
    let mut totals = [0usize; N_CLASSES];
    for (p, l) in predictions.iter().zip(labels) {
        totals[l.index()] += 1;
        hits[l.index()] += usize::from(p == l);
    }
    let recalls: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}
