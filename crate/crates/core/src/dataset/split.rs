use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, LabeledSet, UnlabeledSet};

/// The three disjoint views used by a semi-supervised run.
#[derive(Debug, Clone, PartialEq)]
pub struct SslSplit {
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub test: Dataset,
}

impl SslSplit {
    pub fn class_count(&self) -> usize {
        self.labeled.class_count()
    }

    pub fn dims(&self) -> usize {
        self.labeled.dims()
    }
}

/// Stratified split into test, labeled and unlabeled rows.
///
/// Each class contributes `round(test_fraction * class_size)` rows to the test
/// set; of the rest, exactly `labels_per_class` become labeled and everything
/// else is unlabeled. Rows inside every view are ordered by position in the
/// source dataset.
pub fn split_ssl(
    dataset: &Dataset,
    labels_per_class: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<SslSplit, DataError> {
    let labels = dataset.labels().ok_or(DataError::MissingLabels)?;
    if labels_per_class == 0 {
        return Err(DataError::InvalidArgument(
            "labels_per_class must be at least 1".into(),
        ));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }

    let mut by_class = vec![Vec::new(); dataset.class_count()];
    for (pos, &label) in labels.iter().enumerate() {
        by_class[label].push(pos);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut test, mut labeled, mut unlabeled) = (Vec::new(), Vec::new(), Vec::new());
    for (class, mut members) in by_class.into_iter().enumerate() {
        members.shuffle(&mut rng);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        let available = members.len() - n_test;
        if available < labels_per_class {
            return Err(DataError::ClassTooSmall {
                class,
                available,
                requested: labels_per_class,
            });
        }
        test.extend_from_slice(&members[..n_test]);
        labeled.extend_from_slice(&members[n_test..n_test + labels_per_class]);
        unlabeled.extend_from_slice(&members[n_test + labels_per_class..]);
    }
    for v in [&mut test, &mut labeled, &mut unlabeled] {
        v.sort_unstable();
    }
    if unlabeled.is_empty() {
        return Err(DataError::InvalidArgument(
            "split leaves no unlabeled rows".into(),
        ));
    }

    let lab = dataset.select(&labeled);
    let unl = dataset.select(&unlabeled);
    let labeled = LabeledSet::new(
        lab.features().to_owned(),
        lab.labels().expect("labels present").to_vec(),
        lab.ids().to_vec(),
        dataset.class_count(),
    )?;
    let unlabeled = UnlabeledSet::new(unl.features().to_owned(), unl.ids().to_vec())?
        .with_ground_truth(unl.labels().expect("labels present").to_vec())?;
    Ok(SslSplit {
        labeled,
        unlabeled,
        test: dataset.select(&test),
    })
}
