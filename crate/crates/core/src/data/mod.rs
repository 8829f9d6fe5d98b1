//! Feature-split datasets and device partitions.
//!
//! Each sample carries a federated feature block (edge-resident), a
//! centralized feature block (cloud-resident), and a class label. Sample ids
//! are dense in `[0, N)` and double as row indices. Datasets are immutable
//! after construction and freely shared read-only.

mod csvio;
mod partition;
mod synthetic;

pub use csvio::{load_csv, write_csv, CsvSchema};
pub use partition::{partition_dirichlet, partition_iid, DevicePartition};
pub use synthetic::generate_synthetic;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Which side sees which feature block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSetting {
    /// Devices see federated features only; the cloud sees nothing.
    F,
    /// Centralized features are moved to the edge; devices see the
    /// concatenation, the cloud sees nothing.
    C2f,
    /// Devices see federated features, the cloud sees centralized features.
    Candf,
}

/// Per-sample federated features, centralized features, and labels.
#[derive(Debug, Clone)]
pub struct FeatureSplitDataset {
    fed: Array2<f64>,
    cen: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl FeatureSplitDataset {
    pub fn new(
        fed: Array2<f64>,
        cen: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = FeatureSplitDataset {
            fed,
            cen,
            labels,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 {
            return Err(CoreError::Input("dataset has no samples".into()));
        }
        if self.fed.nrows() != n || self.cen.nrows() != n {
            return Err(CoreError::Shape(format!(
                "feature rows ({}, {}) vs {} labels",
                self.fed.nrows(),
                self.cen.nrows(),
                n
            )));
        }
        if self.fed.ncols() + self.cen.ncols() == 0 {
            return Err(CoreError::Config("d_f + d_c must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(CoreError::Config("need at least two classes".into()));
        }
        let mut seen = vec![false; self.num_classes];
        for &l in &self.labels {
            if l >= self.num_classes {
                return Err(CoreError::Input(format!(
                    "label {l} out of range for {} classes",
                    self.num_classes
                )));
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(CoreError::Input(format!(
                "class {missing} has no samples"
            )));
        }
        if !self.fed.iter().all(|v| v.is_finite()) || !self.cen.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Input("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn fed_dim(&self) -> usize {
        self.fed.ncols()
    }

    pub fn cen_dim(&self) -> usize {
        self.cen.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, id: usize) -> usize {
        self.labels[id]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn fed_row(&self, id: usize) -> ArrayView1<'_, f64> {
        self.fed.row(id)
    }

    pub fn cen_row(&self, id: usize) -> ArrayView1<'_, f64> {
        self.cen.row(id)
    }

    fn gather(matrix: &Array2<f64>, ids: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((ids.len(), matrix.ncols()));
        for (row, &id) in ids.iter().enumerate() {
            out.row_mut(row).assign(&matrix.row(id));
        }
        out
    }

    pub fn labels_for(&self, ids: &[usize]) -> Vec<usize> {
        ids.iter().map(|&id| self.labels[id]).collect()
    }

    pub fn view(&self, setting: FeatureSetting) -> FeatureView<'_> {
        FeatureView { ds: self, setting }
    }
}

/// Role-specific accessors for one feature setting.
#[derive(Debug, Clone, Copy)]
pub struct FeatureView<'a> {
    ds: &'a FeatureSplitDataset,
    setting: FeatureSetting,
}

impl<'a> FeatureView<'a> {
    pub fn setting(&self) -> FeatureSetting {
        self.setting
    }

    pub fn dataset(&self) -> &'a FeatureSplitDataset {
        self.ds
    }

    pub fn device_dim(&self) -> usize {
        match self.setting {
            FeatureSetting::F | FeatureSetting::Candf => self.ds.fed_dim(),
            FeatureSetting::C2f => self.ds.fed_dim() + self.ds.cen_dim(),
        }
    }

    pub fn cloud_dim(&self) -> usize {
        match self.setting {
            FeatureSetting::F | FeatureSetting::C2f => 0,
            FeatureSetting::Candf => self.ds.cen_dim(),
        }
    }

    /// Device-side feature rows for `ids`.
    pub fn device_batch(&self, ids: &[usize]) -> Array2<f64> {
        match self.setting {
            FeatureSetting::F | FeatureSetting::Candf => {
                FeatureSplitDataset::gather(&self.ds.fed, ids)
            }
            FeatureSetting::C2f => {
                let fed = FeatureSplitDataset::gather(&self.ds.fed, ids);
                let cen = FeatureSplitDataset::gather(&self.ds.cen, ids);
                ndarray::concatenate(Axis(1), &[fed.view(), cen.view()])
                    .expect("row counts match")
            }
        }
    }

    /// Cloud-side feature rows for `ids`; zero-width under F and C2F.
    pub fn cloud_batch(&self, ids: &[usize]) -> Array2<f64> {
        match self.setting {
            FeatureSetting::F | FeatureSetting::C2f => Array2::zeros((ids.len(), 0)),
            FeatureSetting::Candf => FeatureSplitDataset::gather(&self.ds.cen, ids),
        }
    }
}
