use crate::error::{FinoError, Result};
use crate::rng::RngState;
use crate::vision::Label;

/// Count of each label, indexed by class.
pub fn class_counts(labels: &[Label]) -> [usize; 2] {
    let mut counts = [0; 2];
    for l in labels {
        counts[l.class_index()] += 1;
    }
    counts
}

/// Per class, `floor(train_fraction * count)` shuffled members go to train
/// and the rest to test. Returns sorted index lists.
pub fn stratified_split(labels: &[Label], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(FinoError::Split(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let root = RngState::new(seed).derive_str("split");
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for label in Label::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if members.len() < 2 {
            return Err(FinoError::Split(format!(
                "class {} has {} episodes; a stratified split needs at least 2 per class",
                label.as_str(),
                members.len()
            )));
        }
        root.derive_str(label.as_str()).stream().shuffle(&mut members);
        // The epsilon keeps products such as 0.7 * 10 from flooring to 6.
        let n_train = (train_fraction * members.len() as f64 + 1e-9).floor() as usize;
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Three-way variant: the test part is as in [`stratified_split`], and the
/// train part is split again so that `val_fraction` of it (per class) is held
/// out for early stopping. Returns `(train, val, test)`.
pub fn stratified_split3(
    labels: &[Label],
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (rest, test) = stratified_split(labels, train_fraction, seed)?;
    let sub: Vec<Label> = rest.iter().map(|&i| labels[i]).collect();
    let (tr, val) = stratified_split(&sub, 1.0 - val_fraction, seed.wrapping_add(1))?;
    Ok((tr.iter().map(|&k| rest[k]).collect(), val.iter().map(|&k| rest[k]).collect(), test))
}

/// `w_k = N / (2 n_k)`: both classes contribute equally to the loss.
pub fn class_weights(labels: &[Label]) -> Result<[f64; 2]> {
    let counts = class_counts(labels);
    if counts.contains(&0) {
        return Err(FinoError::Split(format!(
            "class weights need both classes present, counts are {counts:?}"
        )));
    }
    let n = labels.len() as f64;
    Ok(counts.map(|c| n / (2.0 * c as f64)))
}
