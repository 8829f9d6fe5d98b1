use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{CoreError, Result};
use crate::seeds;

use super::FeatureSplitDataset;

const DIRICHLET_RETRIES: usize = 100;

/// Assignment of sample ids to devices, with the per-device train/test split
/// fixed at partition time. Test samples are never trained on.
#[derive(Debug, Clone)]
pub struct DevicePartition {
    train: Vec<Vec<usize>>,
    test: Vec<Vec<usize>>,
    test_ratio: f64,
}

impl DevicePartition {
    pub fn num_devices(&self) -> usize {
        self.train.len()
    }

    pub fn train_ids(&self, device: usize) -> &[usize] {
        &self.train[device]
    }

    pub fn test_ids(&self, device: usize) -> &[usize] {
        &self.test[device]
    }

    pub fn test_ratio(&self) -> f64 {
        self.test_ratio
    }

    pub fn device_size(&self, device: usize) -> usize {
        self.train[device].len() + self.test[device].len()
    }

    /// Per-device label histogram (train + test), normalized.
    pub fn label_distribution(&self, ds: &FeatureSplitDataset, device: usize) -> Vec<f64> {
        let mut counts = vec![0.0; ds.num_classes()];
        for &id in self.train[device].iter().chain(self.test[device].iter()) {
            counts[ds.label(id)] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        counts.iter().map(|c| c / total).collect()
    }

    /// Checks disjointness and full coverage against the dataset.
    pub fn validate(&self, ds: &FeatureSplitDataset) -> Result<()> {
        let mut seen = vec![false; ds.len()];
        for k in 0..self.num_devices() {
            if self.train[k].is_empty() || self.test[k].is_empty() {
                return Err(CoreError::Partition(format!(
                    "device {k} lacks a train or test sample"
                )));
            }
            for &id in self.train[k].iter().chain(self.test[k].iter()) {
                if id >= ds.len() {
                    return Err(CoreError::Partition(format!("sample id {id} out of range")));
                }
                if seen[id] {
                    return Err(CoreError::Partition(format!(
                        "sample id {id} assigned twice"
                    )));
                }
                seen[id] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(CoreError::Partition(format!(
                "sample id {missing} is unassigned"
            )));
        }
        Ok(())
    }
}

fn check_common(ds: &FeatureSplitDataset, devices: usize, test_ratio: f64) -> Result<()> {
    if devices == 0 {
        return Err(CoreError::Config("need at least one device".into()));
    }
    if ds.len() < 2 * devices {
        return Err(CoreError::Config(format!(
            "need at least 2 samples per device ({} samples, {} devices)",
            ds.len(),
            devices
        )));
    }
    if !(test_ratio > 0.0 && test_ratio < 1.0) {
        return Err(CoreError::Config("test_ratio must be in (0,1)".into()));
    }
    Ok(())
}

/// Splits one device's (already shuffled) sample list into train and test.
/// At least one sample lands on each side.
fn split_train_test(ids: Vec<usize>, test_ratio: f64) -> (Vec<usize>, Vec<usize>) {
    let n = ids.len();
    let raw = (n as f64 * test_ratio).round() as usize;
    let test_count = raw.clamp(1, n - 1);
    let mut train = ids;
    let test = train.split_off(n - test_count);
    (train, test)
}

/// IID partition: a random permutation cut into contiguous chunks of (near)
/// equal size, remainder spread over the first devices.
pub fn partition_iid(
    ds: &FeatureSplitDataset,
    devices: usize,
    test_ratio: f64,
    seed: u64,
) -> Result<DevicePartition> {
    check_common(ds, devices, test_ratio)?;
    let mut rng = seeds::rng(seed, "partition-iid");
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let base = ds.len() / devices;
    let extra = ds.len() % devices;
    let mut train = Vec::with_capacity(devices);
    let mut test = Vec::with_capacity(devices);
    let mut cursor = 0usize;
    for k in 0..devices {
        let size = base + usize::from(k < extra);
        let chunk = order[cursor..cursor + size].to_vec();
        cursor += size;
        let (tr, te) = split_train_test(chunk, test_ratio);
        train.push(tr);
        test.push(te);
    }
    Ok(DevicePartition {
        train,
        test,
        test_ratio,
    })
}

fn dirichlet_proportions(rng: &mut impl Rng, alpha: f64, devices: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    loop {
        let draws: Vec<f64> = (0..devices).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|d| d / sum).collect();
        }
    }
}

/// Non-IID partition: for each class, device proportions are drawn from
/// Dirichlet(alpha) and that class's samples are assigned multinomially. The
/// whole assignment is redrawn (up to a retry budget) until every device has
/// at least one train and one test sample.
pub fn partition_dirichlet(
    ds: &FeatureSplitDataset,
    devices: usize,
    alpha: f64,
    test_ratio: f64,
    seed: u64,
) -> Result<DevicePartition> {
    check_common(ds, devices, test_ratio)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CoreError::Config("alpha must be a positive real".into()));
    }
    let mut rng = seeds::rng(seed, "partition-dirichlet");

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for id in 0..ds.len() {
        by_class[ds.label(id)].push(id);
    }

    for _ in 0..DIRICHLET_RETRIES {
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); devices];
        for ids in &by_class {
            let p = dirichlet_proportions(&mut rng, alpha, devices);
            let mut cumulative = Vec::with_capacity(devices);
            let mut acc = 0.0;
            for &v in &p {
                acc += v;
                cumulative.push(acc);
            }
            for &id in ids {
                let u: f64 = rng.random_range(0.0..1.0);
                let device = cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(devices - 1);
                assigned[device].push(id);
            }
        }
        if assigned.iter().all(|ids| ids.len() >= 2) {
            let mut train = Vec::with_capacity(devices);
            let mut test = Veca_with(&mut assigned, test_ratio, &mut rng);
            std::mem::swap(&mut train, &mut test.0);
            return Ok(DevicePartition {
                train,
                test: test.1,
                test_ratio,
            });
        }
    }
    Err(CoreError::Partition(format!(
        "no assignment satisfied per-device minimums after {DIRICHLET_RETRIES} attempts"
    )))
}

// Shuffle each device's list, then split train/test.
fn veca_with(
    assigned: &mut [Vec<usize>],
    test_ratio: f64,
    rng: &mut impl Rng,
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut train = Vec::with_capacity(assigned.len());
    let mut test = Vec::with_capacity(assigned.len());
    for ids in assigned.iter_mut() {
        ids.shuffle(rng);
        let (tr, te) = split_train_test(std::mem::take(ids), test_ratio);
        train.push(tr);
        test.push(te);
    }
    (train, test)
}
