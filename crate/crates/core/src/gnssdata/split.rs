use rand::seq::SliceRandom;

use super::{Dataset, DayWindow};
use crate::diffcore::seeded;
use crate::error::{Error, Result};

const STREAM_SPLIT: u64 = 0x5b17;

/// Sample indices of each part, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub indices: SplitIndices,
}

/// Test is every sample whose day lies in `window`; the rest is shuffled
/// and `round(0.1·rest)` samples go to validation.
pub fn split(data: &Dataset, window: DayWindow, seed: u64) -> Result<Splits> {
    let (first, last) = match (data.days.first(), data.days.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::EmptySplit),
    };
    if window.is_empty() || window.start < first || window.end > last + 1 {
        return Err(Error::Config(format!(
            "event window [{}, {}) is not inside the data span [{first}, {})",
            window.start,
            window.end,
            last + 1
        )));
    }
    let (test, mut rest): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| window.contains(data.days[i]));
    if rest.is_empty() {
        return Err(Error::EmptySplit);
    }
    rest.shuffle(&mut seeded(seed, STREAM_SPLIT));
    let n_val = (0.1 * rest.len() as f64).round() as usize;
    let mut val = rest[..n_val].to_vec();
    let mut train = rest[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    let indices = SplitIndices { train, val, test };
    Ok(Splits {
        train: data.subset(&indices.train),
        val: data.subset(&indices.val),
        test: data.subset(&indices.test),
        indices,
    })
}
