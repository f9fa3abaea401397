//! Layered random service topologies.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rootscope_core::telemetry::{DependencyGraph, PodId, ServiceId};

use crate::SimError;

pub const METRICS: [&str; 6] = [
    "cpu_usage",
    "memory_usage",
    "network_receive_mb",
    "network_packet_loss",
    "disk_io_wait",
    "request_rate",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub services: usize,
    pub pods_per_service: usize,
    pub layers: usize,
    pub max_out_degree: usize,
    pub max_in_degree: usize,
    /// Chance that a service gains one more caller beyond its first.
    pub extra_caller_prob: f64,
    pub seed: u64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            services: 40,
            pods_per_service: 3,
            layers: 5,
            max_out_degree: 4,
            max_in_degree: 3,
            extra_caller_prob: 0.3,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimService {
    pub id: ServiceId,
    pub layer: usize,
    pub pods: Vec<PodId>,
    /// Baseline value per metric name.
    pub profile: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEdge {
    pub caller: ServiceId,
    pub callee: ServiceId,
    pub base_latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTopology {
    pub services: Vec<SimService>,
    pub edges: Vec<SimEdge>,
}

fn layer_sizes(n: usize, layers: usize, fan: usize) -> Vec<usize> {
    let layers = layers.clamp(1, n);
    let mut sizes = vec![1usize];
    let rest = n - 1;
    let weights: usize = (1..layers).sum();
    for l in 1..layers {
        sizes.push((rest * l).checked_div(weights).unwrap_or(0));
    }
    let mut assigned: usize = sizes.iter().sum();
    let mut l = layers - 1;
    while assigned < n {
        sizes[l] += 1;
        assigned += 1;
        l = if l <= 1 { layers - 1 } else { l - 1 };
    }
    // Respect the fan-out limit by pushing surplus downwards.
    for l in 1..layers {
        let cap = sizes[l - 1] * fan;
        if sizes[l] > cap {
            let surplus = sizes[l] - cap;
            sizes[l] = cap;
            if l + 1 < layers {
                sizes[l + 1] += surplus;
            } else {
                sizes.push(surplus);
            }
        }
        if sizes[l] == 0 {
            sizes[l] = 1;
            let donor = (l + 1..sizes.len()).rev().find(|&j| sizes[j] > 1).expect("n >= layers");
            sizes[donor] -= 1;
        }
    }
    sizes.retain(|&s| s > 0);
    sizes
}

pub fn generate_topology(cfg: &TopologyConfig) -> Result<SimTopology, SimError> {
    if cfg.services == 0 || cfg.pods_per_service == 0 || cfg.layers == 0 {
        return Err(SimError::Config("services, pods and layers must be positive".into()));
    }
    if cfg.max_out_degree == 0 || cfg.max_in_degree == 0 {
        return Err(SimError::Config("degree limits must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes = layer_sizes(cfg.services, cfg.layers, cfg.max_out_degree);
    let width = cfg.services.saturating_sub(1).to_string().len().max(2);
    let mut services = Vec::with_capacity(cfg.services);
    let mut by_layer: Vec<Vec<usize>> = Vec::new();
    for (layer, &size) in sizes.iter().enumerate() {
        let mut ids = Vec::new();
        for _ in 0..size {
            let idx = services.len();
            let id = ServiceId::new(format!("svc{idx:0width$}"));
            let pods = (0..cfg.pods_per_service)
                .map(|p| PodId::new(format!("{id}-{p}")))
                .collect();
            let profile = [
                ("cpu_usage", rng.random_range(20.0..50.0)),
                ("memory_usage", rng.random_range(30.0..60.0)),
                ("network_receive_mb", rng.random_range(10.0..50.0)),
                ("network_packet_loss", rng.random_range(0.5..1.0)),
                ("disk_io_wait", rng.random_range(2.0..8.0)),
                ("request_rate", rng.random_range(50.0..200.0)),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
            services.push(SimService {
                id,
                layer,
                pods,
                profile,
            });
            ids.push(idx);
        }
        by_layer.push(ids);
    }

    let n = services.len();
    let mut out = vec![0usize; n];
    let mut inn = vec![0usize; n];
    let mut adj = vec![vec![false; n]; n];
    let mut edges = Vec::new();
    let mut link =
        |a: usize, b: usize, out: &mut [usize], inn: &mut [usize], adj: &mut [Vec<bool>], rng: &mut ChaCha8Rng| {
            out[a] += 1;
            inn[b] += 1;
            adj[a][b] = true;
            edges.push(SimEdge {
                caller: services[a].id.clone(),
                callee: services[b].id.clone(),
                base_latency_ms: rng.random_range(5.0..40.0),
            });
        };
    for l in 1..by_layer.len() {
        for &s in &by_layer[l] {
            let open: Vec<usize> = by_layer[l - 1]
                .iter()
                .copied()
                .filter(|&c| out[c] < cfg.max_out_degree)
                .collect();
            let first = *open.choose(&mut rng).expect("layer sizes respect fan-out");
            link(first, s, &mut out, &mut inn, &mut adj, &mut rng);
            while inn[s] < cfg.max_in_degree && rng.random_bool(cfg.extra_caller_prob.clamp(0.0, 1.0)) {
                let more: Vec<usize> = by_layer[..l]
                    .iter()
                    .flatten()
                    .copied()
                    .filter(|&c| out[c] < cfg.max_out_degree && !adj[c][s])
                    .collect();
                let Some(&c) = more.choose(&mut rng) else { break };
                link(c, s, &mut out, &mut inn, &mut adj, &mut rng);
            }
        }
    }
    edges.sort_by(|a, b| (&a.caller, &a.callee).cmp(&(&b.caller, &b.callee)));
    Ok(SimTopology { services, edges })
}

impl SimTopology {
    pub fn service(&self, id: &ServiceId) -> Option<&SimService> {
        self.services.iter().find(|s| s.id == *id)
    }

    pub fn dependency_graph(&self) -> DependencyGraph {
        let mut g = DependencyGraph::from_edges(self.edges.iter().map(|e| (e.caller.clone(), e.callee.clone())));
        for s in &self.services {
            g.add_node(s.id.clone());
        }
        g
    }

    pub fn callers(&self, id: &ServiceId) -> Vec<&ServiceId> {
        self.edges
            .iter()
            .filter(|e| e.callee == *id)
            .map(|e| &e.caller)
            .collect()
    }

    /// Shortest caller-hop distance to `target` for every transitive caller.
    pub fn hops_to(&self, target: &ServiceId) -> BTreeMap<ServiceId, usize> {
        let mut hops = BTreeMap::from([(target.clone(), 0usize)]);
        let mut queue = VecDeque::from([target.clone()]);
        while let Some(s) = queue.pop_front() {
            let h = hops[&s];
            for c in self.callers(&s) {
                if !hops.contains_key(c) {
                    hops.insert(c.clone(), h + 1);
                    queue.push_back(c.clone());
                }
            }
        }
        hops
    }

    pub fn max_out_degree(&self) -> usize {
        let mut out: BTreeMap<&ServiceId, usize> = BTreeMap::new();
        for e in &self.edges {
            *out.entry(&e.caller).or_default() += 1;
        }
        out.values().copied().max().unwrap_or(0)
    }

    pub fn to_topology_json(&self) -> serde_json::Value {
        self.dependency_graph().to_topology_json()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_cover_all_services() {
        for (n, l) in [(1, 5), (10, 3), (10, 5), (20, 4), (40, 5), (43, 5)] {
            let s = layer_sizes(n, l, 4);
            assert_eq!(s.iter().sum::<usize>(), n, "{n} {l} {s:?}");
            assert_eq!(s[0], 1);
            for w in s.windows(2) {
                assert!(w[1] <= 4 * w[0], "{s:?}");
            }
        }
    }

    #[test]
    fn every_service_reachable_from_gateway() {
        let t = generate_topology(&TopologyConfig::default()).unwrap();
        assert_eq!(t.services.len(), 40);
        let hops = {
            let mut seen = std::collections::BTreeSet::from([t.services[0].id.clone()]);
            let mut q = vec![t.services[0].id.clone()];
            while let Some(s) = q.pop() {
                for e in t.edges.iter().filter(|e| e.caller == s) {
                    if seen.insert(e.callee.clone()) {
                        q.push(e.callee.clone());
                    }
                }
            }
            seen
        };
        assert_eq!(hops.len(), 40);
        assert!(t.max_out_degree() <= 4);
    }

    #[test]
    fn edges_point_down_layers() {
        let t = generate_topology(&TopologyConfig::default()).unwrap();
        for e in &t.edges {
            assert!(t.service(&e.caller).unwrap().layer < t.service(&e.callee).unwrap().layer);
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let c = TopologyConfig::default();
        assert_eq!(generate_topology(&c).unwrap(), generate_topology(&c).unwrap());
        let other = generate_topology(&TopologyConfig { seed: 8, ..c }).unwrap();
        assert_ne!(
            other.edges,
            generate_topology(&TopologyConfig::default()).unwrap().edges
        );
    }

    #[test]
    fn hop_distances() {
        let t = generate_topology(&TopologyConfig::default()).unwrap();
        let target = t.services.last().unwrap().id.clone();
        let hops = t.hops_to(&target);
        assert_eq!(hops[&target], 0);
        for c in t.callers(&target) {
            assert_eq!(hops[c], 1);
        }
        assert!(hops.contains_key(&t.services[0].id));
    }
}
