//! Exact discrete optimal transport: shortest-augmenting-path assignment for
//! equal-weight clouds and successive-shortest-path min-cost flow for general
//! weights.

/// Minimum-cost perfect assignment on a square row-major cost matrix.
/// Returns `assign[i] = j` and the total cost.
pub fn assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    // Potentials-based Hungarian method, 1-indexed internally.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i * n + assign[i]]).sum();
    (assign, total)
}

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Optimal transport cost between supplies `a` (len n) and demands `b`
/// (len m) for a row-major `n x m` cost matrix. Both must carry equal mass.
pub fn min_cost_transport(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let n = a.len();
    let m = b.len();
    let source = n + m;
    let sink = n + m + 1;
    let nodes = n + m + 2;
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let add = |edges: &mut Vec<Edge>, adj: &mut Vec<Vec<usize>>, from: usize, to: usize, cap: f64, cost: f64| {
        adj[from].push(edges.len());
        edges.push(Edge { to, cap, cost });
        adj[to].push(edges.len());
        edges.push(Edge {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    };
    for (i, &ai) in a.iter().enumerate() {
        add(&mut edges, &mut adj, source, i, ai, 0.0);
    }
    for i in 0..n {
        for j in 0..m {
            add(&mut edges, &mut adj, i, n + j, f64::INFINITY, cost[i * m + j]);
        }
    }
    for (j, &bj) in b.iter().enumerate() {
        add(&mut edges, &mut adj, n + j, sink, bj, 0.0);
    }

    let eps = 1e-15;
    let mut potential = vec![0.0; nodes];
    let mut remaining: f64 = a.iter().sum::<f64>().min(b.iter().sum());
    let mut total = 0.0;
    while remaining > eps {
        // Dense Dijkstra on reduced costs.
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev_edge = vec![usize::MAX; nodes];
        let mut done = vec![false; nodes];
        dist[source] = 0.0;
        loop {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best_d {
                    best_d = dist[v];
                    best = v;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            for &e in &adj[best] {
                let edge = &edges[e];
                if edge.cap > eps {
                    let reduced = edge.cost + potential[best] - potential[edge.to];
                    let nd = best_d + reduced.max(0.0);
                    if nd < dist[edge.to] {
                        dist[edge.to] = nd;
                        prev_edge[edge.to] = e;
                    }
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        for v in 0..nodes {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        let mut push = remaining;
        let mut v = sink;
        while v != source {
            let e = prev_edge[v];
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while v != source {
            let e = prev_edge[v];
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            total += push * edges[e].cost;
            v = edges[e ^ 1].to;
        }
        remaining -= push;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_small() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let (assign, total) = assignment(&cost, 3);
        assert_eq!(total, 5.0);
        let mut seen = assign.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn flow_matches_assignment_on_uniform() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let w = [1.0 / 3.0; 3];
        let flow = min_cost_transport(&w, &w, &cost);
        assert!((flow - 5.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn flow_splits_mass() {
        // One source of mass 1 to two sinks at costs 1 and 2 with masses 0.3, 0.7.
        let flow = min_cost_transport(&[1.0], &[0.3, 0.7], &[1.0, 2.0]);
        assert!((flow - 1.7).abs() < 1e-14);
    }
}
