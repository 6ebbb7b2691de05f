use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Gamma, StandardUniform};
use serde::{Deserialize, Serialize};

use super::MasterDataset;
use crate::error::{config, data, Result};
use crate::numerics::logsumexp;
use crate::rng::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    Dirichlet { alpha: f64 },
    IidKshot { k: usize },
    Domain { clients_per_domain: usize },
}

/// Per-client index lists into one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub clients: Vec<Vec<usize>>,
    /// `proportions[c][i]`: share of class `c` sent to client `i`
    /// (Dirichlet plans only).
    pub proportions: Option<Vec<Vec<f64>>>,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// True when lists are disjoint and all indices are `< n`.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.clients.iter().flatten() {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        true
    }

    pub fn assigned(&self) -> usize {
        self.clients.iter().map(Vec::len).sum()
    }
}

/// `Dirichlet(α·1)` draw computed through log-gamma variates, which stays
/// finite when α is small enough for plain gamma draws to underflow.
fn dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            if alpha >= 1.0 {
                Gamma::new(alpha, 1.0).expect("alpha is positive").sample(rng).ln()
            } else {
                // G(α) = G(α + 1) · U^(1/α)
                let g = Gamma::new(alpha + 1.0, 1.0).expect("alpha is positive").sample(rng);
                let u: f64 = StandardUniform.sample(rng);
                g.ln() + u.ln() / alpha
            }
        })
        .collect();
    let norm = logsumexp(&logs);
    logs.iter().map(|l| (l - norm).exp()).collect()
}

/// Sends each index of class `c` to a client drawn from `proportions[c]`.
pub fn assign_by_proportions<R: Rng + ?Sized>(labels: &[usize], proportions: &[Vec<f64>], rng: &mut R) -> Result<Vec<Vec<usize>>> {
    let clients = proportions.first().map_or(0, Vec::len);
    if clients == 0 {
        return config("proportions cover no clients");
    }
    let samplers = proportions
        .iter()
        .map(|p| WeightedIndex::new(p).map_err(|e| crate::Error::Data(format!("bad class proportions: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![Vec::new(); clients];
    for (i, &l) in labels.iter().enumerate() {
        let Some(s) = samplers.get(l) else {
            return data(format!("label {l} has no proportions"));
        };
        out[s.sample(rng)].push(i);
    }
    Ok(out)
}

/// Label-skewed partition: per class `p ~ Dirichlet(α)` and a categorical
/// draw from `p` for each of its samples.
pub fn dirichlet_partition<R: Rng + ?Sized>(
    labels: &[usize],
    classes: usize,
    clients: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<PartitionPlan> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return config(format!("Dirichlet concentration must be positive, got {alpha}"));
    }
    if clients == 0 {
        return config("partition needs at least one client");
    }
    let proportions: Vec<Vec<f64>> = (0..classes).map(|_| dirichlet(alpha, clients, rng)).collect();
    let lists = assign_by_proportions(labels, &proportions, rng)?;
    Ok(PartitionPlan { scheme: PartitionScheme::Dirichlet { alpha }, clients: lists, proportions: Some(proportions) })
}

/// Every client receives exactly `k` distinct samples of every class.
pub fn kshot_iid_partition<R: Rng + ?Sized>(
    labels: &[usize],
    classes: usize,
    clients: usize,
    k: usize,
    rng: &mut R,
) -> Result<PartitionPlan> {
    if clients == 0 || k == 0 {
        return config("k-shot partition needs at least one client and one shot");
    }
    let mut per_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    let mut lists = vec![Vec::with_capacity(k * classes); clients];
    for (c, mut idx) in per_class.into_iter().enumerate() {
        if idx.len() < k * clients {
            return data(format!("class {c} has {} samples; {k} shots for {clients} clients need {}", idx.len(), k * clients));
        }
        idx.shuffle(rng);
        for (i, list) in lists.iter_mut().enumerate() {
            list.extend_from_slice(&idx[i * k..(i + 1) * k]);
        }
    }
    Ok(PartitionPlan { scheme: PartitionScheme::IidKshot { k }, clients: lists, proportions: None })
}

/// Each domain's samples spread evenly over its own `clients_per_domain`
/// clients; domains are taken in sorted tag order.
pub fn domain_partition<R: Rng + ?Sized>(ds: &MasterDataset, clients_per_domain: usize, rng: &mut R) -> Result<PartitionPlan> {
    let Some(tags) = ds.domains() else {
        return data("domain partition needs domain tags");
    };
    if clients_per_domain == 0 {
        return config("clients_per_domain must be at least 1");
    }
    let mut names: Vec<&String> = tags.iter().collect();
    names.sort();
    names.dedup();
    let mut lists = Vec::with_capacity(names.len() * clients_per_domain);
    for name in names {
        let mut idx: Vec<usize> = (0..tags.len()).filter(|&i| &tags[i] == name).collect();
        idx.shuffle(rng);
        for c in 0..clients_per_domain {
            lists.push(idx.iter().skip(c).step_by(clients_per_domain).copied().collect());
        }
    }
    Ok(PartitionPlan { scheme: PartitionScheme::Domain { clients_per_domain }, clients: lists, proportions: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    FirstHalf,
    Random { seed: u64 },
}

/// `ceil(C/2)` base classes and `floor(C/2)` novel classes, each sorted.
pub fn base_novel_split(classes: usize, mode: SplitMode) -> Result<(Vec<usize>, Vec<usize>)> {
    if classes < 2 {
        return config(format!("base/novel split needs at least 2 classes, got {classes}"));
    }
    let mut order: Vec<usize> = (0..classes).collect();
    if let SplitMode::Random { seed } = mode {
        order.shuffle(&mut rng::stream(&[tags::SPLIT, seed]));
    }
    let cut = classes.div_ceil(2);
    let mut base = order[..cut].to_vec();
    let mut novel = order[cut..].to_vec();
    base.sort_unstable();
    novel.sort_unstable();
    Ok((base, novel))
}

/// Mean Shannon entropy (nats) of the label histogram of non-empty clients.
pub fn mean_label_entropy(labels: &[usize], classes: usize, plan: &PartitionPlan) -> f64 {
    let mut total = 0.0;
    let mut counted = 0;
    for list in plan.clients.iter().filter(|l| !l.is_empty()) {
        let mut hist = vec![0usize; classes];
        for &i in list {
            hist[labels[i]] += 1;
        }
        let n = list.len() as f64;
        total -= hist.iter().filter(|h| **h > 0).map(|&h| (h as f64 / n) * (h as f64 / n).ln()).sum::<f64>();
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(classes: usize, per: usize) -> Vec<usize> {
        (0..classes).flat_map(|c| std::iter::repeat_n(c, per)).collect()
    }

    #[test]
    fn single_client_gets_everything() {
        let l = labels(4, 5);
        let plan = dirichlet_partition(&l, 4, 1, 0.1, &mut rng::stream(&[1])).unwrap();
        assert_eq!(plan.clients[0], (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn proportions_are_distributions() {
        let l = labels(10, 8);
        let plan = dirichlet_partition(&l, 10, 10, 0.01, &mut rng::stream(&[2])).unwrap();
        for p in plan.proportions.as_ref().unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
        assert!(dirichlet_partition(&l, 10, 10, 0.0, &mut rng::stream(&[2])).is_err());
    }

    #[test]
    fn entropy_grows_with_alpha() {
        let l = labels(10, 8);
        let entropy = |alpha: f64| -> f64 {
            (0..10)
                .map(|s| mean_label_entropy(&l, 10, &dirichlet_partition(&l, 10, 10, alpha, &mut rng::stream(&[s])).unwrap()))
                .sum::<f64>()
                / 10.0
        };
        let e: Vec<f64> = [0.1, 1.0, 10.0, 100.0].iter().map(|&a| entropy(a)).collect();
        assert!(e[0] < e[3], "{e:?}");
        assert!(e.windows(2).all(|w| w[1] >= w[0] - 0.05), "{e:?}");
    }

    #[test]
    fn kshot_counts() {
        let l = labels(10, 20);
        let plan = kshot_iid_partition(&l, 10, 3, 1, &mut rng::stream(&[3])).unwrap();
        assert!(plan.clients.iter().all(|c| c.len() == 10));
        for k in [1, 2, 4] {
            let plan = kshot_iid_partition(&l, 10, 5, k, &mut rng::stream(&[3])).unwrap();
            for c in 0..10 {
                let n: usize = plan.clients.iter().map(|list| list.iter().filter(|&&i| l[i] == c).count()).sum();
                assert_eq!(n, k * 5);
            }
        }
        assert!(kshot_iid_partition(&l, 10, 3, 8, &mut rng::stream(&[3])).is_err());
    }

    #[test]
    fn base_novel_examples() {
        assert_eq!(base_novel_split(4, SplitMode::FirstHalf).unwrap(), (vec![0, 1], vec![2, 3]));
        let (b, n) = base_novel_split(101, SplitMode::Random { seed: 7 }).unwrap();
        assert_eq!((b.len(), n.len()), (51, 50));
        assert_eq!(base_novel_split(101, SplitMode::Random { seed: 7 }).unwrap(), (b, n));
        assert!(base_novel_split(1, SplitMode::FirstHalf).is_err());
    }

    #[test]
    fn domain_partition_is_single_domain() {
        use crate::data::{generate_synthetic_dataset, SyntheticSpec};
        let spec = SyntheticSpec { classes: 2, dim: 8, per_class: 6, ..SyntheticSpec::default() };
        let base = generate_synthetic_dataset(&spec).unwrap();
        let parts: Vec<MasterDataset> = (0..6).map(|d| base.clone().with_domain(&format!("d{d}"))).collect();
        let ds = MasterDataset::concat(&parts).unwrap();
        let plan = domain_partition(&ds, 2, &mut rng::stream(&[1])).unwrap();
        assert_eq!(plan.num_clients(), 12);
        assert!(plan.is_partition_of(ds.len()) && plan.assigned() == ds.len());
        for list in &plan.clients {
            let tags = ds.domains().unwrap();
            assert!(list.iter().all(|&i| tags[i] == tags[list[0]]));
            assert_eq!(list.len(), 6);
        }
        assert!(domain_partition(&base, 2, &mut rng::stream(&[1])).is_err());
    }

    proptest! {
        #[test]
        fn partitions_are_exact(seed in 0u64..5000, clients in 1usize..8, alpha in 0.05f64..50.0) {
            let l = labels(5, 7);
            let plan = dirichlet_partition(&l, 5, clients, alpha, &mut rng::stream(&[seed])).unwrap();
            prop_assert!(plan.is_partition_of(l.len()));
            prop_assert_eq!(plan.assigned(), l.len());
            let again = dirichlet_partition(&l, 5, clients, alpha, &mut rng::stream(&[seed])).unwrap();
            prop_assert_eq!(plan, again);
            let ks = kshot_iid_partition(&l, 5, clients.min(3), 2, &mut rng::stream(&[seed])).unwrap();
            prop_assert!(ks.is_partition_of(l.len()));
        }
    }
}
