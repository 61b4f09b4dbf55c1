//! Assembly of local side information from a dataset.

use crate::flows::SideSource;
use crate::models::Dataset;

/// Data features attached to one sequence position.
///
/// Defined for every integer index, including indices outside 0..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInfoVector {
    /// Position scaled by the exposed range, so times stay O(1).
    pub time: f64,
    /// 1 when the position carries an observation.
    pub observed: f64,
    /// The observation vector, or the next recorded observation when the
    /// position is unobserved, or zeros when there is no next observation.
    pub observation: Vec<f64>,
    /// Steps until the next observation; absent when every index 0..=T is
    /// observed.
    pub time_to_next: Option<f64>,
    /// 1 when the position lies inside 0..=T.
    pub in_range: f64,
}

impl SideInfoVector {
    pub fn push_onto(&self, out: &mut Vec<f64>) {
        out.push(self.time);
        out.push(self.observed);
        out.extend_from_slice(&self.observation);
        if let Some(t) = self.time_to_next {
            out.push(t);
        }
        out.push(self.in_range);
    }

    pub fn dim(&self) -> usize {
        3 + self.observation.len() + usize::from(self.time_to_next.is_some())
    }
}

/// Features for a single position.
pub fn side_vector(dataset: &Dataset, i: i64, t_exposed: usize) -> SideInfoVector {
    let spec = &dataset.spec;
    let k = spec.obs_dim();
    let observed = i >= 0 && dataset.obs_at(i.max(0) as usize).is_some();
    let next = dataset.next_obs_at_or_after(i);
    let observation = next
        .map(|(_, y)| y.to_vec())
        .unwrap_or_else(|| vec![0.0; k]);
    let time_to_next = if dataset.fully_observed() {
        None
    } else {
        Some(next.map(|(j, _)| (j as i64 - i) as f64).unwrap_or(0.0))
    };
    SideInfoVector {
        time: i as f64 / t_exposed.max(1) as f64,
        observed: f64::from(observed as u8),
        observation,
        time_to_next,
        in_range: f64::from((i >= 0 && i <= spec.t_len as i64) as u8),
    }
}

/// The window of side-information vectors around position `i`.
pub fn build_side_info(
    dataset: &Dataset,
    i: i64,
    ell_prime: usize,
    t_exposed: usize,
) -> Vec<SideInfoVector> {
    ((i - ell_prime as i64)..=(i + ell_prime as i64))
        .map(|j| side_vector(dataset, j, t_exposed))
        .collect()
}

/// [`SideSource`] view of a dataset for the flow's encoder.
pub struct DataSide<'a> {
    dataset: &'a Dataset,
    t_exposed: usize,
}

impl<'a> DataSide<'a> {
    pub fn new(dataset: &'a Dataset, t_exposed: usize) -> Self {
        DataSide { dataset, t_exposed }
    }

    pub fn full(dataset: &'a Dataset) -> Self {
        DataSide::new(dataset, dataset.spec.t_len)
    }
}

impl SideSource for DataSide<'_> {
    fn feature_dim(&self) -> usize {
        3 + self.dataset.spec.obs_dim() + usize::from(!self.dataset.fully_observed())
    }

    fn append_features(&self, i: i64, out: &mut Vec<f64>) {
        side_vector(self.dataset, i, self.t_exposed).push_onto(out);
    }
}
