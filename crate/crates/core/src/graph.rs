//! Alarm propagation topology and the fault mining tree built from it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{DependencyGraph, ServiceId};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("alarmed service `{0}` is not in the dependency graph")]
    UnknownService(ServiceId),
    #[error("nothing alarmed")]
    Empty,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmPropagationGraph {
    pub nodes: BTreeSet<ServiceId>,
    pub edges: BTreeSet<(ServiceId, ServiceId)>,
}

impl AlarmPropagationGraph {
    pub fn callees(&self) -> BTreeMap<&ServiceId, Vec<&ServiceId>> {
        let mut m: BTreeMap<&ServiceId, Vec<&ServiceId>> = self.nodes.iter().map(|n| (n, Vec::new())).collect();
        for (a, b) in &self.edges {
            m.entry(a).or_default().push(b);
        }
        m
    }
}

/// Transitive callers of `targets` in `dep`, excluding the targets unless
/// they call one another.
pub fn ancestors(dep: &DependencyGraph, targets: &BTreeSet<ServiceId>) -> BTreeSet<ServiceId> {
    let callers = dep.callers();
    let mut seen: BTreeSet<ServiceId> = BTreeSet::new();
    let mut queue: VecDeque<&ServiceId> = targets.iter().collect();
    while let Some(n) = queue.pop_front() {
        for c in callers.get(n).into_iter().flatten() {
            if seen.insert((*c).clone()) {
                queue.push_back(c);
            }
        }
    }
    seen
}

/// Restricts the dependency graph to alarmed services and their callers,
/// then links alarmed services directly (`u → v`) whenever a call path
/// from `u` reaches `v` through non-alarmed services only.
pub fn extract_alarm_topology(
    dep: &DependencyGraph,
    alarmed: &BTreeSet<ServiceId>,
) -> Result<AlarmPropagationGraph, GraphError> {
    if let Some(missing) = alarmed.iter().find(|s| !dep.contains(s)) {
        return Err(GraphError::UnknownService(missing.clone()));
    }
    let mut keep = ancestors(dep, alarmed);
    keep.extend(alarmed.iter().cloned());
    let callees = dep.callees();
    let mut g = AlarmPropagationGraph {
        nodes: alarmed.clone(),
        edges: BTreeSet::new(),
    };
    for u in alarmed {
        let mut seen: BTreeSet<&ServiceId> = BTreeSet::from([u]);
        let mut queue: VecDeque<&ServiceId> = VecDeque::from([u]);
        while let Some(n) = queue.pop_front() {
            for &v in callees.get(n).into_iter().flatten() {
                if !keep.contains(v) || !seen.insert(v) {
                    continue;
                }
                if alarmed.contains(v) {
                    g.edges.insert((u.clone(), v.clone()));
                } else {
                    queue.push_back(v);
                }
            }
        }
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    /// `None` only for the virtual root.
    pub service: Option<ServiceId>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Arena tree; index 0 is the virtual root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultMiningTree {
    pub nodes: Vec<TreeNode>,
    /// Graph edges not used as tree edges.
    pub cross_links: Vec<(ServiceId, ServiceId)>,
    /// Edges dropped to break cycles.
    pub removed_edges: Vec<(ServiceId, ServiceId)>,
}

pub const VIRTUAL_ROOT: usize = 0;

impl FaultMiningTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    pub fn service_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn service(&self, i: usize) -> Option<&ServiceId> {
        self.nodes[i].service.as_ref()
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.nodes[i].children
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.nodes[i].parent
    }

    pub fn index_of(&self, s: &ServiceId) -> Option<usize> {
        self.nodes.iter().position(|n| n.service.as_ref() == Some(s))
    }

    pub fn subtree_roots(&self) -> &[usize] {
        self.children(VIRTUAL_ROOT)
    }

    /// Tree parent (unless virtual) followed by cross-link callers, sorted.
    pub fn callers_of(&self, i: usize) -> Vec<usize> {
        let mut out: BTreeSet<usize> = BTreeSet::new();
        if let Some(p) = self.parent(i).filter(|&p| p != VIRTUAL_ROOT) {
            out.insert(p);
        }
        if let Some(s) = self.service(i) {
            for (a, b) in &self.cross_links {
                if b == s {
                    if let Some(j) = self.index_of(a) {
                        out.insert(j);
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    /// Services from a subtree root down to `i`.
    pub fn path_to(&self, i: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = Some(i);
        while let Some(c) = cur.filter(|&c| c != VIRTUAL_ROOT) {
            path.push(c);
            cur = self.parent(c);
        }
        path.reverse();
        path
    }

    pub fn depth(&self, i: usize) -> usize {
        self.path_to(i).len()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.nodes.iter().filter_map(|n| n.parent.map(|p| (p, n.id))).collect()
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = x;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Back edges of a DFS visiting nodes and successors in lexicographic
/// order, in discovery order.
fn back_edges(nodes: &[ServiceId], succ: &BTreeMap<usize, BTreeSet<usize>>) -> Vec<(usize, usize)> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut mark = vec![Mark::White; nodes.len()];
    let mut out = Vec::new();
    for start in 0..nodes.len() {
        if mark[start] != Mark::White {
            continue;
        }
        let mut stack: Vec<(usize, Vec<usize>)> = vec![(start, succ[&start].iter().rev().copied().collect())];
        mark[start] = Mark::Grey;
        while let Some((n, pending)) = stack.last_mut() {
            let n = *n;
            match pending.pop() {
                Some(v) => match mark[v] {
                    Mark::White => {
                        mark[v] = Mark::Grey;
                        stack.push((v, succ[&v].iter().rev().copied().collect()));
                    }
                    Mark::Grey => out.push((n, v)),
                    Mark::Black => {}
                },
                None => {
                    mark[n] = Mark::Black;
                    stack.pop();
                }
            }
        }
    }
    out
}

/// Breaks cycles, splits the graph into weakly connected regions and turns
/// each into a breadth-first tree hung under a virtual root.
pub fn build_fault_mining_tree(g: &AlarmPropagationGraph) -> Result<FaultMiningTree, GraphError> {
    if g.nodes.is_empty() {
        return Err(GraphError::Empty);
    }
    let names: Vec<ServiceId> = g.nodes.iter().cloned().collect();
    let idx: BTreeMap<&ServiceId, usize> = names.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut succ: BTreeMap<usize, BTreeSet<usize>> = (0..names.len()).map(|i| (i, BTreeSet::new())).collect();
    for (a, b) in &g.edges {
        if let (Some(&x), Some(&y)) = (idx.get(a), idx.get(b)) {
            if x != y {
                succ.get_mut(&x).unwrap().insert(y);
            }
        }
    }
    let mut removed = Vec::new();
    while let Some(&(a, b)) = back_edges(&names, &succ).last() {
        succ.get_mut(&a).unwrap().remove(&b);
        removed.push((names[a].clone(), names[b].clone()));
    }

    let mut uf: Vec<usize> = (0..names.len()).collect();
    let mut indeg = vec![0usize; names.len()];
    for (&a, bs) in &succ {
        for &b in bs {
            indeg[b] += 1;
            let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
            if ra != rb {
                uf[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..names.len() {
        let r = find(&mut uf, i);
        components.entry(r).or_default().push(i);
    }

    let mut tree = FaultMiningTree {
        nodes: vec![TreeNode {
            id: VIRTUAL_ROOT,
            service: None,
            parent: None,
            children: Vec::new(),
        }],
        cross_links: Vec::new(),
        removed_edges: removed,
    };
    let mut arena_of: Vec<Option<usize>> = vec![None; names.len()];
    for members in components.values() {
        let mut roots: Vec<usize> = members.iter().copied().filter(|&m| indeg[m] == 0).collect();
        if roots.is_empty() {
            roots.push(members[0]);
        }
        let mut queue = VecDeque::new();
        for &r in &roots {
            let id = tree.nodes.len();
            tree.nodes.push(TreeNode {
                id,
                service: Some(names[r].clone()),
                parent: Some(VIRTUAL_ROOT),
                children: Vec::new(),
            });
            tree.nodes[VIRTUAL_ROOT].children.push(id);
            arena_of[r] = Some(id);
            queue.push_back(r);
        }
        while let Some(n) = queue.pop_front() {
            let pid = arena_of[n].unwrap();
            for &v in &succ[&n] {
                match arena_of[v] {
                    None => {
                        let id = tree.nodes.len();
                        tree.nodes.push(TreeNode {
                            id,
                            service: Some(names[v].clone()),
                            parent: Some(pid),
                            children: Vec::new(),
                        });
                        tree.nodes[pid].children.push(id);
                        arena_of[v] = Some(id);
                        queue.push_back(v);
                    }
                    Some(_) => tree.cross_links.push((names[n].clone(), names[v].clone())),
                }
            }
        }
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dep(edges: &[(&str, &str)]) -> DependencyGraph {
        DependencyGraph::from_edges(edges.iter().copied())
    }

    fn set(xs: &[&str]) -> BTreeSet<ServiceId> {
        xs.iter().map(|s| ServiceId::from(*s)).collect()
    }

    fn edges(g: &AlarmPropagationGraph) -> Vec<(String, String)> {
        g.edges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn e(a: &str, b: &str) -> (String, String) {
        (a.into(), b.into())
    }

    #[test]
    fn identity_restriction() {
        let g = extract_alarm_topology(&dep(&[("A", "B"), ("B", "C")]), &set(&["A", "B", "C"])).unwrap();
        assert_eq!(edges(&g), vec![e("A", "B"), e("B", "C")]);
    }

    #[test]
    fn contraction_through_silent_intermediate() {
        let g = extract_alarm_topology(&dep(&[("A", "B"), ("B", "C")]), &set(&["A", "C"])).unwrap();
        assert_eq!(edges(&g), vec![e("A", "C")]);
        assert_eq!(g.nodes, set(&["A", "C"]));
    }

    #[test]
    fn disjoint_regions() {
        let g = extract_alarm_topology(&dep(&[("A", "B"), ("X", "Y")]), &set(&["A", "B", "X", "Y"])).unwrap();
        let t = build_fault_mining_tree(&g).unwrap();
        assert_eq!(t.subtree_roots().len(), 2);
    }

    #[test]
    fn unknown_alarmed_service() {
        let err = extract_alarm_topology(&dep(&[("A", "B")]), &set(&["Q"])).unwrap_err();
        assert_eq!(err, GraphError::UnknownService("Q".into()));
    }

    fn svc_tree(t: &FaultMiningTree) -> Vec<(String, String)> {
        t.edges()
            .into_iter()
            .map(|(p, c)| {
                (
                    t.service(p).map_or("ROOT".into(), |s| s.to_string()),
                    t.service(c).unwrap().to_string(),
                )
            })
            .collect()
    }

    #[test]
    fn chain_tree() {
        let g = extract_alarm_topology(&dep(&[("A", "B"), ("B", "C")]), &set(&["A", "B", "C"])).unwrap();
        let t = build_fault_mining_tree(&g).unwrap();
        assert_eq!(svc_tree(&t), vec![e("ROOT", "A"), e("A", "B"), e("B", "C")]);
    }

    #[test]
    fn diamond_cross_link() {
        let d = dep(&[("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")]);
        let g = extract_alarm_topology(&d, &set(&["A", "B", "C", "D"])).unwrap();
        let t = build_fault_mining_tree(&g).unwrap();
        let dn = t.index_of(&"D".into()).unwrap();
        assert_eq!(t.service(t.parent(dn).unwrap()).unwrap().as_str(), "B");
        assert_eq!(t.cross_links, vec![("C".into(), "D".into())]);
        let callers: Vec<&str> = t
            .callers_of(dn)
            .iter()
            .map(|&i| t.service(i).unwrap().as_str())
            .collect();
        assert_eq!(callers, vec!["B", "C"]);
    }

    #[test]
    fn two_components_under_root() {
        let g = extract_alarm_topology(&dep(&[("A", "B"), ("X", "Y")]), &set(&["A", "B", "X", "Y"])).unwrap();
        let t = build_fault_mining_tree(&g).unwrap();
        let roots: Vec<&str> = t
            .subtree_roots()
            .iter()
            .map(|&i| t.service(i).unwrap().as_str())
            .collect();
        assert_eq!(roots, vec!["A", "X"]);
    }

    #[test]
    fn cycle_broken_deterministically() {
        let g = AlarmPropagationGraph {
            nodes: set(&["A", "B", "C"]),
            edges: [("A", "B"), ("B", "C"), ("C", "A")]
                .iter()
                .map(|(a, b)| (ServiceId::from(*a), ServiceId::from(*b)))
                .collect(),
        };
        let t = build_fault_mining_tree(&g).unwrap();
        assert_eq!(t.removed_edges, vec![("C".into(), "A".into())]);
        assert_eq!(svc_tree(&t), vec![e("ROOT", "A"), e("A", "B"), e("B", "C")]);
    }

    #[test]
    fn empty_graph_errors() {
        assert_eq!(
            build_fault_mining_tree(&AlarmPropagationGraph::default()).unwrap_err(),
            GraphError::Empty
        );
    }
}
