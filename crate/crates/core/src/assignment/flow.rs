use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowArc {
    pub from: usize,
    pub to: usize,
    pub cap: i64,
    pub cost: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FlowNetwork {
    nodes: usize,
    arcs: Vec<FlowArc>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork { nodes, arcs: Vec::new() }
    }

    pub fn add_node(&mut self) -> usize {
        self.nodes += 1;
        self.nodes - 1
    }

    pub fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        assert!(from < self.nodes && to < self.nodes, "arc endpoint out of range");
        assert!(cap >= 0, "negative capacity");
        self.arcs.push(FlowArc { from, to, cap, cost });
        self.arcs.len() - 1
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn arcs(&self) -> &[FlowArc] {
        &self.arcs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub value: i64,
    pub cost: f64,
    /// Flow on each arc, indexed like `FlowNetwork::arcs`.
    pub arc_flows: Vec<i64>,
}

struct Residual {
    to: usize,
    cap: i64,
    cost: f64,
}

/// Minimum-cost maximum flow by successive shortest paths with node
/// potentials. `limit` caps the flow value.
pub fn min_cost_flow(net: &FlowNetwork, source: usize, sink: usize, limit: Option<i64>) -> FlowResult {
    let n = net.nodes;
    let mut edges: Vec<Residual> = Vec::with_capacity(net.arcs.len() * 2);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for a in &net.arcs {
        adj[a.from].push(edges.len());
        edges.push(Residual { to: a.to, cap: a.cap, cost: a.cost });
        adj[a.to].push(edges.len());
        edges.push(Residual { to: a.from, cap: 0, cost: -a.cost });
    }
    let mut pot = vec![0.0f64; n];
    if net.arcs.iter().any(|a| a.cost < 0.0) {
        // Bellman-Ford to seed potentials when negative arc costs are present.
        let mut dist = vec![f64::INFINITY; n];
        dist[source] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &adj[u] {
                    let r = &edges[e];
                    if r.cap > 0 && dist[u] + r.cost < dist[r.to] {
                        dist[r.to] = dist[u] + r.cost;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for v in 0..n {
            if dist[v].is_finite() {
                pot[v] = dist[v];
            }
        }
    }

    let limit = limit.unwrap_or(i64::MAX);
    let mut value = 0i64;
    let mut dist = vec![f64::INFINITY; n];
    let mut via = vec![usize::MAX; n];
    while value < limit && source != sink {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        via.iter_mut().for_each(|e| *e = usize::MAX);
        dist[source] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((OrderedFloat(0.0), source)));
        while let Some(Reverse((OrderedFloat(d), u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &e in &adj[u] {
                let r = &edges[e];
                if r.cap <= 0 {
                    continue;
                }
                let reduced = (r.cost + pot[u] - pot[r.to]).max(0.0);
                let nd = d + reduced;
                if nd < dist[r.to] {
                    dist[r.to] = nd;
                    via[r.to] = e;
                    heap.push(Reverse((OrderedFloat(nd), r.to)));
                }
            }
        }
        if dist[sink].is_infinite() {
            break;
        }
        for v in 0..n {
            if dist[v].is_finite() {
                pot[v] += dist[v];
            }
        }
        let mut push = limit - value;
        let mut v = sink;
        while v != source {
            let e = via[v];
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while v != source {
            let e = via[v];
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            v = edges[e ^ 1].to;
        }
        value += push;
    }

    let arc_flows: Vec<i64> = (0..net.arcs.len()).map(|i| edges[2 * i + 1].cap).collect();
    let cost = net
        .arcs
        .iter()
        .zip(&arc_flows)
        .map(|(a, &f)| f as f64 * a.cost)
        .sum();
    FlowResult { value, cost, arc_flows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_arc() {
        let mut net = FlowNetwork::new(2);
        net.add_arc(0, 1, 1, 5.0);
        let r = min_cost_flow(&net, 0, 1, None);
        assert_eq!((r.value, r.cost), (1, 5.0));
    }

    #[test]
    fn parallel_arcs() {
        let mut net = FlowNetwork::new(2);
        net.add_arc(0, 1, 1, 1.0);
        net.add_arc(0, 1, 1, 3.0);
        let r = min_cost_flow(&net, 0, 1, Some(2));
        assert_eq!((r.value, r.cost), (2, 4.0));
        let r = min_cost_flow(&net, 0, 1, Some(1));
        assert_eq!((r.value, r.cost), (1, 1.0));
    }

    #[test]
    fn demand_exceeds_capacity() {
        let mut net = FlowNetwork::new(3);
        net.add_arc(0, 1, 5, 1.0);
        net.add_arc(1, 2, 2, 1.0);
        let r = min_cost_flow(&net, 0, 2, Some(4));
        assert_eq!(r.value, 2);
    }

    #[test]
    fn uses_residual_reversal() {
        // Greedy path s-a-t blocks the optimum; the second augmentation must
        // cancel flow on a-t.
        let (s, a, b, t) = (0, 1, 2, 3);
        let mut net = FlowNetwork::new(4);
        net.add_arc(s, a, 1, 0.0);
        net.add_arc(s, b, 1, 0.0);
        net.add_arc(a, t, 1, 1.0);
        net.add_arc(a, b, 1, 0.0);
        net.add_arc(b, t, 1, 0.0);
        let r = min_cost_flow(&net, s, t, None);
        assert_eq!(r.value, 2);
        assert_eq!(r.cost, 1.0);
    }

    #[test]
    fn negative_costs_seeded() {
        let mut net = FlowNetwork::new(3);
        net.add_arc(0, 1, 1, -2.0);
        net.add_arc(1, 2, 1, 1.0);
        net.add_arc(0, 2, 1, 0.5);
        let r = min_cost_flow(&net, 0, 2, None);
        assert_eq!(r.value, 2);
        assert_eq!(r.cost, -0.5);
    }
}
