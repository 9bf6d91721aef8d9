//! Synthetic datasets, heterogeneous client partitioning, and the grouping
//! of clients into edge-server clusters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Sample;
use crate::numerics::RandomStream;

/// Distance between the two blob centers of the binary Gaussian dataset.
pub const BLOB_SEPARATION: f64 = 3.0;

/// Number of fresh proportion draws the partition sampler tries before
/// giving up on producing non-empty shards.
pub const PARTITION_RETRY_BUDGET: usize = 100;

/// Tolerance used to decide whether a target value is an integer class
/// label (classification) or a real-valued regression target.
const LABEL_INTEGER_TOL: f64 = 1e-9;

/// Supported synthetic dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    /// Two Gaussian blobs with labels in {0, 1}.
    GaussianBlobsBinary,
    /// Linear targets `y = w_true · x + noise · ε`.
    LinearRegression,
}

/// Recipe for one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub total_size: usize,
    pub input_dim: usize,
    /// Standard deviation of the additive Gaussian noise (blob spread for
    /// classification, target noise for regression).
    pub noise: f64,
    /// Number of classes; must be 2 for the binary blob dataset and is
    /// ignored for regression.
    pub class_count: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_size == 0 {
            return Err(Error::contract("dataset: total_size must be positive"));
        }
        if self.input_dim == 0 {
            return Err(Error::contract("dataset: input_dim must be positive"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::contract(format!(
                "dataset: noise must be finite and ≥ 0, got {}",
                self.noise
            )));
        }
        if self.kind == DatasetKind::GaussianBlobsBinary && self.class_count != 2 {
            return Err(Error::contract(format!(
                "dataset: binary blobs require class_count = 2, got {}",
                self.class_count
            )));
        }
        Ok(())
    }
}

/// The (deterministic) true weights of the regression dataset: a ramp
/// `1, 2, 3, …` so tests can verify exact recovery at zero noise.
pub fn regression_true_weights(input_dim: usize) -> Vec<f64> {
    (0..input_dim).map(|i| (i + 1) as f64).collect()
}

fn blob_center(label: usize, input_dim: usize) -> Vec<f64> {
    // Centers sit at ±(SEPARATION/2)/√d · (1, …, 1), exactly SEPARATION apart
    // regardless of dimension.
    let sign = if label == 0 { -1.0 } else { 1.0 };
    let component = sign * BLOB_SEPARATION / 2.0 / (input_dim as f64).sqrt();
    vec![component; input_dim]
}

/// Draws a dataset described by a [`DatasetSpec`]. Samples come out in a fixed
/// deterministic order: labels alternate for the blob dataset and draws are
/// consumed sample-by-sample, so the same seed always yields the same data.
pub fn generate_dataset(spec: &DatasetSpec, stream: &mut RandomStream) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.total_size);
    match spec.kind {
        DatasetKind::GaussianBlobsBinary => {
            for i in 0..spec.total_size {
                let label = i % 2;
                let center = blob_center(label, spec.input_dim);
                let x: Vec<f64> = center
                    .iter()
                    .map(|c| c + spec.noise * stream.next_normal())
                    .collect();
                samples.push(Sample::new(x, label as f64));
            }
        }
        DatasetKind::LinearRegression => {
            let w_true = regression_true_weights(spec.input_dim);
            for _ in 0..spec.total_size {
                let x: Vec<f64> = (0..spec.input_dim).map(|_| stream.next_normal()).collect();
                let clean: f64 = w_true.iter().zip(&x).map(|(w, xi)| w * xi).sum();
                let y = clean + spec.noise * stream.next_normal();
                samples.push(Sample::new(x, y));
            }
        }
    }
    Ok(samples)
}

/// Per-client shards of a dataset. Shards are disjoint by construction and
/// every client holds at least one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    shards: Vec<Vec<Sample>>,
}

impl Partition {
    /// Wraps explicit shards, enforcing that none is empty.
    pub fn from_shards(shards: Vec<Vec<Sample>>) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::contract("partition: need at least one client"));
        }
        for (n, shard) in shards.iter().enumerate() {
            if shard.is_empty() {
                return Err(Error::EmptyShard(n));
            }
        }
        Ok(Partition { shards })
    }

    pub fn client_count(&self) -> usize {
        self.shards.len()
    }

    pub fn shards(&self) -> &[Vec<Sample>] {
        &self.shards
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(|s| s.len()).collect()
    }

    pub fn total_size(&self) -> usize {
        self.shards.iter().map(|s| s.len()).sum()
    }

    /// Size-proportional client weights `D_n / D`, which make the weighted
    /// global objective equal the pooled-dataset mean.
    pub fn global_weights(&self) -> Vec<f64> {
        let total = self.total_size() as f64;
        self.shards.iter().map(|s| s.len() as f64 / total).collect()
    }
}

/// Integer class labels for a dataset if every target is a non-negative
/// integer (within tolerance); `None` for real-valued targets.
fn integer_labels(dataset: &[Sample]) -> Option<Vec<usize>> {
    let mut labels = Vec::with_capacity(dataset.len());
    for sample in dataset {
        let rounded = sample.y.round();
        if (sample.y - rounded).abs() > LABEL_INTEGER_TOL || rounded < 0.0 {
            return None;
        }
        labels.push(rounded as usize);
    }
    Some(labels)
}

/// Largest-remainder apportionment of `count` items according to
/// `proportions` (which need not be normalized). Ties in the fractional
/// part break toward the lower index so results are deterministic.
fn largest_remainder_counts(proportions: &[f64], count: usize) -> Vec<usize> {
    let total: f64 = proportions.iter().sum();
    let quotas: Vec<f64> = proportions
        .iter()
        .map(|p| p / total * count as f64)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &idx in order.iter().take(count - assigned) {
        counts[idx] += 1;
    }
    counts
}

/// Splits a dataset across `clients` shards with Dirichlet(concentration)
/// class proportions: small concentrations give skewed, nearly single-class
/// shards; large concentrations approach a uniform split.
///
/// Classification datasets (integer labels) are apportioned per class;
/// real-valued datasets are treated as a single class, so the draw controls
/// shard sizes only. The sampler redraws (up to [`PARTITION_RETRY_BUDGET`]
/// times) until every client ends up with at least one sample.
pub fn dirichlet_partition(
    dataset: &[Sample],
    clients: usize,
    concentration: f64,
    stream: &mut RandomStream,
) -> Result<Partition> {
    if clients == 0 {
        return Err(Error::contract("dirichlet_partition: clients must be ≥ 1"));
    }
    if dataset.len() < clients {
        return Err(Error::contract(format!(
            "dirichlet_partition: {} samples cannot cover {} clients",
            dataset.len(),
            clients
        )));
    }
    if !(concentration.is_finite() && concentration > 0.0) {
        return Err(Error::contract(format!(
            "dirichlet_partition: concentration must be positive, got {concentration}"
        )));
    }

    // Group sample indices by class, preserving dataset order inside each
    // class. Real-valued targets collapse to a single group.
    let labels = integer_labels(dataset);
    let mut class_members: Vec<Vec<usize>> = Vec::new();
    match &labels {
        Some(labels) => {
            let max_label = *labels.iter().max().expect("dataset is non-empty");
            class_members = vec![Vec::new(); max_label + 1];
            for (i, &label) in labels.iter().enumerate() {
                class_members[label].push(i);
            }
            class_members.retain(|members| !members.is_empty());
        }
        None => class_members.push((0..dataset.len()).collect()),
    }

    for _attempt in 0..PARTITION_RETRY_BUDGET {
        let mut shard_indices: Vec<Vec<usize>> = vec![Vec::new(); clients];
        for members in &class_members {
            let mut proportions = Vec::with_capacity(clients);
            for _ in 0..clients {
                proportions.push(stream.next_gamma(concentration)?);
            }
            if proportions.iter().sum::<f64>() <= 0.0 {
                // Extremely small concentrations can underflow every draw;
                // treat it as a failed attempt.
                shard_indices.clear();
                break;
            }
            let counts = largest_remainder_counts(&proportions, members.len());
            let mut cursor = 0usize;
            for (client, &count) in counts.iter().enumerate() {
                shard_indices[client].extend_from_slice(&members[cursor..cursor + count]);
                cursor += count;
            }
        }
        if shard_indices.len() == clients && shard_indices.iter().all(|s| !s.is_empty()) {
            let shards: Vec<Vec<Sample>> = shard_indices
                .into_iter()
                .map(|mut indices| {
                    indices.sort_unstable();
                    indices.into_iter().map(|i| dataset[i].clone()).collect()
                })
                .collect();
            return Partition::from_shards(shards);
        }
    }
    Err(Error::PartitionInfeasible {
        retries: PARTITION_RETRY_BUDGET,
        detail: format!(
            "could not give each of {clients} clients a non-empty shard \
             (concentration {concentration})"
        ),
    })
}

/// One edge-server cluster: its member clients (ascending), their in-cluster
/// aggregation weights `D_n / D_cluster`, and the total sample mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterState {
    clients: Vec<usize>,
    weights: Vec<f64>,
    mass: usize,
}

impl ClusterState {
    pub fn clients(&self) -> &[usize] {
        &self.clients
    }

    /// Aggregation weights aligned with [`ClusterState::clients`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total number of samples held by the cluster's clients.
    pub fn mass(&self) -> usize {
        self.mass
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }
}

/// A full assignment of clients to clusters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    clusters: Vec<ClusterState>,
}

impl Clustering {
    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn clusters(&self) -> &[ClusterState] {
        &self.clusters
    }

    pub fn cluster(&self, m: usize) -> &ClusterState {
        &self.clusters[m]
    }

    /// Largest cluster size in clients (the `N_max` of the upload bound).
    pub fn max_cluster_size(&self) -> usize {
        self.clusters
            .iter()
            .map(ClusterState::client_count)
            .max()
            .unwrap_or(0)
    }

    pub fn masses(&self) -> Vec<usize> {
        self.clusters.iter().map(ClusterState::mass).collect()
    }
}

/// How clients are grouped into clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterPolicy {
    /// Consecutive blocks of client indices, sizes as equal as possible.
    Contiguous,
    /// Client `n` joins cluster `n mod M`.
    RoundRobin,
    /// Greedy stratified assignment that makes per-cluster label
    /// distributions match the global one as closely as whole clients
    /// allow, breaking ties toward the lightest cluster so label-free
    /// (regression) data still spreads into mass-balanced clusters.
    IidClusters,
}

fn cluster_from_members(partition: &Partition, mut members: Vec<usize>) -> ClusterState {
    members.sort_unstable();
    let mass: usize = members.iter().map(|&n| partition.shards()[n].len()).sum();
    let weights: Vec<f64> = members
        .iter()
        .map(|&n| partition.shards()[n].len() as f64 / mass as f64)
        .collect();
    ClusterState {
        clients: members,
        weights,
        mass,
    }
}

/// Per-client class-count vectors (classification) or bare sizes
/// (regression, treated as one class).
fn client_class_counts(partition: &Partition) -> Vec<Vec<f64>> {
    let pooled: Vec<Sample> = partition
        .shards()
        .iter()
        .flat_map(|s| s.iter().cloned())
        .collect();
    match integer_labels(&pooled) {
        Some(_) => {
            let class_of = |sample: &Sample| sample.y.round() as usize;
            let class_count = partition
                .shards()
                .iter()
                .flat_map(|s| s.iter().map(class_of))
                .max()
                .unwrap_or(0)
                + 1;
            partition
                .shards()
                .iter()
                .map(|shard| {
                    let mut counts = vec![0.0; class_count];
                    for sample in shard {
                        counts[class_of(sample)] += 1.0;
                    }
                    counts
                })
                .collect()
        }
        None => partition
            .shards()
            .iter()
            .map(|shard| vec![shard.len() as f64])
            .collect(),
    }
}

/// Total absolute deviation of every cluster's class counts from exact
/// proportionality with the global class fractions. Zero means every
/// cluster's label distribution equals the global one exactly.
fn stratification_imbalance(
    cluster_counts: &[Vec<f64>],
    cluster_masses: &[f64],
    global_fractions: &[f64],
) -> f64 {
    let mut total = 0.0;
    for (counts, &mass) in cluster_counts.iter().zip(cluster_masses) {
        for (c, &count) in counts.iter().enumerate() {
            total += (count - global_fractions[c] * mass).abs();
        }
    }
    total
}

fn assign_iid_clusters(partition: &Partition, cluster_count: usize) -> Vec<Vec<usize>> {
    let per_client = client_class_counts(partition);
    let class_count = per_client[0].len();
    let client_mass: Vec<f64> = per_client.iter().map(|c| c.iter().sum()).collect();
    let total_mass: f64 = client_mass.iter().sum();
    let mut global_fractions = vec![0.0; class_count];
    for counts in &per_client {
        for (c, v) in counts.iter().enumerate() {
            global_fractions[c] += v;
        }
    }
    for f in global_fractions.iter_mut() {
        *f /= total_mass;
    }

    // Greedy seeding: largest clients first, each placed where it disturbs
    // proportionality least — ties broken toward the lightest cluster, so
    // label-free data (one class) still spreads into balanced clusters —
    // while guaranteeing no cluster stays empty.
    let mut order: Vec<usize> = (0..partition.client_count()).collect();
    order.sort_by(|&a, &b| {
        client_mass[b]
            .partial_cmp(&client_mass[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cluster_count];
    let mut counts: Vec<Vec<f64>> = vec![vec![0.0; class_count]; cluster_count];
    let mut masses = vec![0.0; cluster_count];
    for (placed, &client) in order.iter().enumerate() {
        let remaining = partition.client_count() - placed;
        let empty = members.iter().filter(|m| m.is_empty()).count();
        let must_fill_empty = remaining <= empty;
        let mut best: Option<(f64, f64, usize)> = None;
        for m in 0..cluster_count {
            if must_fill_empty && !members[m].is_empty() {
                continue;
            }
            let mut score = 0.0;
            let new_mass = masses[m] + client_mass[client];
            for c in 0..class_count {
                let new_count = counts[m][c] + per_client[client][c];
                score += (new_count - global_fractions[c] * new_mass).abs();
            }
            if best
                .map(|(s, mass, _)| (score, new_mass) < (s, mass))
                .unwrap_or(true)
            {
                best = Some((score, new_mass, m));
            }
        }
        let (_, _, m) = best.expect("at least one cluster is always eligible");
        members[m].push(client);
        for c in 0..class_count {
            counts[m][c] += per_client[client][c];
        }
        masses[m] += client_mass[client];
    }

    // Local refinement: take any single-client move or pairwise swap that
    // strictly reduces the total imbalance, until none remains.
    let mut current = stratification_imbalance(&counts, &masses, &global_fractions);
    loop {
        let mut best_gain = 1e-9;
        let mut best_action: Option<(usize, usize, usize, Option<usize>)> = None;
        // Moves: client at members[a][i] → cluster b.
        for a in 0..cluster_count {
            if members[a].len() <= 1 {
                continue;
            }
            for (i, &client) in members[a].iter().enumerate() {
                for b in 0..cluster_count {
                    if b == a {
                        continue;
                    }
                    let mut trial_counts = counts.clone();
                    let mut trial_masses = masses.clone();
                    for c in 0..class_count {
                        trial_counts[a][c] -= per_client[client][c];
                        trial_counts[b][c] += per_client[client][c];
                    }
                    trial_masses[a] -= client_mass[client];
                    trial_masses[b] += client_mass[client];
                    let score =
                        stratification_imbalance(&trial_counts, &trial_masses, &global_fractions);
                    if current - score > best_gain {
                        best_gain = current - score;
                        best_action = Some((a, i, b, None));
                    }
                }
            }
        }
        // Swaps: members[a][i] ↔ members[b][j].
        for a in 0..cluster_count {
            for b in (a + 1)..cluster_count {
                for i in 0..members[a].len() {
                    for j in 0..members[b].len() {
                        let ca = members[a][i];
                        let cb = members[b][j];
                        let mut trial_counts = counts.clone();
                        let mut trial_masses = masses.clone();
                        for c in 0..class_count {
                            trial_counts[a][c] += per_client[cb][c] - per_client[ca][c];
                            trial_counts[b][c] += per_client[ca][c] - per_client[cb][c];
                        }
                        trial_masses[a] += client_mass[cb] - client_mass[ca];
                        trial_masses[b] += client_mass[ca] - client_mass[cb];
                        let score = stratification_imbalance(
                            &trial_counts,
                            &trial_masses,
                            &global_fractions,
                        );
                        if current - score > best_gain {
                            best_gain = current - score;
                            best_action = Some((a, i, b, Some(j)));
                        }
                    }
                }
            }
        }
        match best_action {
            Some((a, i, b, None)) => {
                let client = members[a].remove(i);
                members[b].push(client);
                for c in 0..class_count {
                    counts[a][c] -= per_client[client][c];
                    counts[b][c] += per_client[client][c];
                }
                masses[a] -= client_mass[client];
                masses[b] += client_mass[client];
            }
            Some((a, i, b, Some(j))) => {
                let ca = members[a][i];
                let cb = members[b][j];
                members[a][i] = cb;
                members[b][j] = ca;
                for c in 0..class_count {
                    counts[a][c] += per_client[cb][c] - per_client[ca][c];
                    counts[b][c] += per_client[ca][c] - per_client[cb][c];
                }
                masses[a] += client_mass[cb] - client_mass[ca];
                masses[b] += client_mass[ca] - client_mass[cb];
            }
            None => break,
        }
        current = stratification_imbalance(&counts, &masses, &global_fractions);
    }
    members
}

/// Groups clients into `cluster_count` clusters under the given policy.
/// Every cluster is non-empty, clusters partition the client set, and
/// member weights are `D_n / D_cluster`.
pub fn assign_clusters(
    partition: &Partition,
    cluster_count: usize,
    policy: ClusterPolicy,
    _stream: &mut RandomStream,
) -> Result<Clustering> {
    let clients = partition.client_count();
    if cluster_count == 0 {
        return Err(Error::contract(
            "assign_clusters: need at least one cluster",
        ));
    }
    if cluster_count > clients {
        return Err(Error::contract(format!(
            "assign_clusters: {cluster_count} clusters cannot all be non-empty with only \
             {clients} clients"
        )));
    }
    let members: Vec<Vec<usize>> = match policy {
        ClusterPolicy::Contiguous => {
            let base = clients / cluster_count;
            let extra = clients % cluster_count;
            let mut members = Vec::with_capacity(cluster_count);
            let mut cursor = 0usize;
            for m in 0..cluster_count {
                let size = base + usize::from(m < extra);
                members.push((cursor..cursor + size).collect());
                cursor += size;
            }
            members
        }
        ClusterPolicy::RoundRobin => {
            let mut members = vec![Vec::new(); cluster_count];
            for n in 0..clients {
                members[n % cluster_count].push(n);
            }
            members
        }
        ClusterPolicy::IidClusters => assign_iid_clusters(partition, cluster_count),
    };
    let clusters: Vec<ClusterState> = members
        .into_iter()
        .map(|m| cluster_from_members(partition, m))
        .collect();
    Ok(Clustering { clusters })
}

/// Mean, over clients, of the total-variation distance between the
/// client's label distribution and the global one: `(1/N)·Σ_n ½·Σ_c
/// |p_{n,c} − p_c|`. Zero means every client mirrors the global label mix;
/// values near 1 mean near-disjoint label support. Labels must be
/// non-negative integers.
pub fn mean_label_tv_distance(partition: &Partition) -> Result<f64> {
    let pooled: Vec<Sample> = partition
        .shards()
        .iter()
        .flat_map(|s| s.iter().cloned())
        .collect();
    let labels = integer_labels(&pooled).ok_or_else(|| {
        Error::contract("label distance requires integer class labels, got real-valued targets")
    })?;
    let class_count = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut global = vec![0.0f64; class_count];
    for &label in &labels {
        global[label] += 1.0;
    }
    let total = pooled.len() as f64;
    for g in global.iter_mut() {
        *g /= total;
    }
    let mut tv_sum = 0.0;
    for shard in partition.shards() {
        let mut local = vec![0.0f64; class_count];
        for sample in shard {
            local[sample.y.round() as usize] += 1.0;
        }
        let size = shard.len() as f64;
        let tv: f64 = local
            .iter()
            .zip(&global)
            .map(|(l, g)| (l / size - g).abs())
            .sum::<f64>()
            / 2.0;
        tv_sum += tv;
    }
    Ok(tv_sum / partition.client_count() as f64)
}

/// Serializes a partition as one sample per line:
/// `client_id<TAB>label<TAB>x1,x2,…`. Floats use the shortest
/// round-trippable decimal form, so export → import is lossless.
pub fn partition_to_text(partition: &Partition) -> String {
    let mut out = String::new();
    for (client, shard) in partition.shards().iter().enumerate() {
        for sample in shard {
            let features: Vec<String> = sample.x.iter().map(|v| format!("{v}")).collect();
            out.push_str(&format!("{client}\t{}\t{}\n", sample.y, features.join(",")));
        }
    }
    out
}

/// Parses the format produced by [`partition_to_text`]. Client ids must be
/// contiguous starting at 0 and every client must own at least one sample.
pub fn partition_from_text(text: &str) -> Result<Partition> {
    let mut shards: Vec<Vec<Sample>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_number = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (client, label, features) = match (parts.next(), parts.next(), parts.next()) {
            (Some(c), Some(l), Some(f)) if parts.next().is_none() => (c, l, f),
            _ => {
                return Err(Error::Parse {
                    line: line_number,
                    detail: "expected client<TAB>label<TAB>features".into(),
                })
            }
        };
        let client: usize = client.parse().map_err(|e| Error::Parse {
            line: line_number,
            detail: format!("bad client id: {e}"),
        })?;
        let label: f64 = label.parse().map_err(|e| Error::Parse {
            line: line_number,
            detail: format!("bad label: {e}"),
        })?;
        let mut x = Vec::new();
        for piece in features.split(',') {
            let value: f64 = piece.parse().map_err(|e| Error::Parse {
                line: line_number,
                detail: format!("bad feature value: {e}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line: line_number,
                    detail: format!("non-finite feature value {value}"),
                });
            }
            x.push(value);
        }
        if !label.is_finite() {
            return Err(Error::Parse {
                line: line_number,
                detail: format!("non-finite label {label}"),
            });
        }
        if client >= shards.len() {
            shards.resize_with(client + 1, Vec::new);
        }
        shards[client].push(Sample::new(x, label));
    }
    if shards.is_empty() {
        return Err(Error::Parse {
            line: 0,
            detail: "no samples found".into(),
        });
    }
    for (n, shard) in shards.iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::Parse {
                line: 0,
                detail: format!("client {n} has no samples (ids must be contiguous)"),
            });
        }
    }
    Partition::from_shards(shards)
}
