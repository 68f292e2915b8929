//! Bipartite transportation network: source -> row i (capacity a_i),
//! row i -> column j (unbounded, support cells only), column j -> sink
//! (capacity b_j). Max flow by shortest augmenting paths.

use std::collections::VecDeque;

use crate::matrix::{Matrix, SupportPattern};

/// Residual capacities at or below this are treated as exhausted, and flows
/// at or below it as zero.
pub(crate) const FLOW_EPS: f64 = 1e-13;

pub(crate) struct TransportFlow {
    rows: usize,
    cols: usize,
    support: SupportPattern,
    row_cap: Vec<f64>,
    col_cap: Vec<f64>,
    /// flow on the source edges, the cell edges and the sink edges
    row_flow: Vec<f64>,
    cell_flow: Matrix,
    col_flow: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Node {
    Source,
    Row(usize),
    Col(usize),
    Sink,
}

impl TransportFlow {
    /// Runs max flow to completion.
    pub(crate) fn solve(row_cap: &[f64], col_cap: &[f64], support: &SupportPattern) -> Self {
        let (rows, cols) = support.shape();
        debug_assert_eq!(rows, row_cap.len());
        debug_assert_eq!(cols, col_cap.len());
        let mut flow = Self {
            rows,
            cols,
            support: support.clone(),
            row_cap: row_cap.to_vec(),
            col_cap: col_cap.to_vec(),
            row_flow: vec![0.0; rows],
            cell_flow: Matrix::zeros(rows, cols),
            col_flow: vec![0.0; cols],
        };
        while let Some(path) = flow.augmenting_path() {
            flow.augment(&path);
        }
        flow
    }

    pub(crate) fn value(&self) -> f64 {
        self.row_flow.iter().sum()
    }

    pub(crate) fn cell_flows(&self) -> &Matrix {
        &self.cell_flow
    }

    fn index(&self, n: Node) -> usize {
        match n {
            Node::Source => 0,
            Node::Row(i) => 1 + i,
            Node::Col(j) => 1 + self.rows + j,
            Node::Sink => 1 + self.rows + self.cols,
        }
    }

    /// Residual neighbours of a node with their residual capacities.
    fn residual_edges(&self, n: Node) -> Vec<(Node, f64)> {
        let mut out = Vec::new();
        match n {
            Node::Source => {
                for i in 0..self.rows {
                    out.push((Node::Row(i), self.row_cap[i] - self.row_flow[i]));
                }
            }
            Node::Row(i) => {
                for j in 0..self.cols {
                    if self.support.contains(i, j) {
                        out.push((Node::Col(j), f64::INFINITY));
                    }
                }
                out.push((Node::Source, self.row_flow[i]));
            }
            Node::Col(j) => {
                for i in 0..self.rows {
                    if self.support.contains(i, j) {
                        out.push((Node::Row(i), self.cell_flow[(i, j)]));
                    }
                }
                out.push((Node::Sink, self.col_cap[j] - self.col_flow[j]));
            }
            Node::Sink => {
                for j in 0..self.cols {
                    out.push((Node::Col(j), self.col_flow[j]));
                }
            }
        }
        out.retain(|&(_, c)| c > FLOW_EPS);
        out
    }

    fn bfs(&self, from: Node, allow: impl Fn(Node) -> bool) -> Vec<Option<Node>> {
        let n = 2 + self.rows + self.cols;
        let mut parent: Vec<Option<Node>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[self.index(from)] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            for (v, _) in self.residual_edges(u) {
                let k = self.index(v);
                if !seen[k] && allow(v) {
                    seen[k] = true;
                    parent[k] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        parent
    }

    fn path_to(&self, parent: &[Option<Node>], from: Node, to: Node) -> Option<Vec<Node>> {
        if from != to && parent[self.index(to)].is_none() {
            return None;
        }
        let mut path = vec![to];
        let mut cur = to;
        while cur != from {
            cur = parent[self.index(cur)]?;
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }

    fn augmenting_path(&self) -> Option<Vec<Node>> {
        let parent = self.bfs(Node::Source, |_| true);
        self.path_to(&parent, Node::Source, Node::Sink)
    }

    fn residual(&self, u: Node, v: Node) -> f64 {
        match (u, v) {
            (Node::Source, Node::Row(i)) => self.row_cap[i] - self.row_flow[i],
            (Node::Row(i), Node::Source) => self.row_flow[i],
            (Node::Row(_), Node::Col(_)) => f64::INFINITY,
            (Node::Col(j), Node::Row(i)) => self.cell_flow[(i, j)],
            (Node::Col(j), Node::Sink) => self.col_cap[j] - self.col_flow[j],
            (Node::Sink, Node::Col(j)) => self.col_flow[j],
            _ => 0.0,
        }
    }

    fn push(&mut self, u: Node, v: Node, amount: f64) {
        match (u, v) {
            (Node::Source, Node::Row(i)) => self.row_flow[i] += amount,
            (Node::Row(i), Node::Source) => self.row_flow[i] -= amount,
            (Node::Row(i), Node::Col(j)) => self.cell_flow[(i, j)] += amount,
            (Node::Col(j), Node::Row(i)) => self.cell_flow[(i, j)] -= amount,
            (Node::Col(j), Node::Sink) => self.col_flow[j] += amount,
            (Node::Sink, Node::Col(j)) => self.col_flow[j] -= amount,
            _ => unreachable!("no edge {u:?} -> {v:?}"),
        }
    }

    fn bottleneck(&self, path: &[Node]) -> f64 {
        path.windows(2)
            .map(|w| self.residual(w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    fn augment(&mut self, path: &[Node]) {
        let delta = self.bottleneck(path);
        for w in path.windows(2) {
            self.push(w[0], w[1], delta);
        }
    }

    /// Rows and columns reachable from the source in the residual network.
    pub(crate) fn source_side(&self) -> (Vec<usize>, Vec<usize>) {
        let parent = self.bfs(Node::Source, |_| true);
        let reached = |n: Node| parent[self.index(n)].is_some();
        let rows = (0..self.rows).filter(|&i| reached(Node::Row(i))).collect();
        let cols = (0..self.cols).filter(|&j| reached(Node::Col(j))).collect();
        (rows, cols)
    }

    /// Whether cell (i, j) carries flow in some maximum flow: either it does
    /// in this one, or it closes a residual cycle through column j back to
    /// row i. Cycles through the source or sink cannot occur once both
    /// sides are saturated.
    pub(crate) fn cell_can_carry(&self, i: usize, j: usize) -> bool {
        if !self.support.contains(i, j) {
            return false;
        }
        if self.cell_flow[(i, j)] > FLOW_EPS {
            return true;
        }
        self.cycle_back(i, j).is_some()
    }

    fn cycle_back(&self, i: usize, j: usize) -> Option<Vec<Node>> {
        let inner = |n: Node| matches!(n, Node::Row(_) | Node::Col(_));
        let parent = self.bfs(Node::Col(j), inner);
        self.path_to(&parent, Node::Col(j), Node::Row(i))
    }

    /// A maximum flow that is positive on cell (i, j), obtained by pushing
    /// half the available circulation around a residual cycle.
    pub(crate) fn rerouted_through(&self, i: usize, j: usize) -> Option<Matrix> {
        if self.cell_flow[(i, j)] > FLOW_EPS {
            return Some(self.cell_flow.clone());
        }
        let back = self.cycle_back(i, j)?;
        let mut cycle = vec![Node::Row(i)];
        cycle.extend(back);
        let delta = self.bottleneck(&cycle);
        let mut alt = Self {
            rows: self.rows,
            cols: self.cols,
            support: self.support.clone(),
            row_cap: self.row_cap.clone(),
            col_cap: self.col_cap.clone(),
            row_flow: self.row_flow.clone(),
            cell_flow: self.cell_flow.clone(),
            col_flow: self.col_flow.clone(),
        };
        for w in cycle.windows(2) {
            alt.push(w[0], w[1], delta / 2.0);
        }
        Some(alt.cell_flow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturates_full_support() {
        let s = SupportPattern::full(2, 3);
        let f = TransportFlow::solve(&[0.4, 0.6], &[0.2, 0.3, 0.5], &s);
        assert!((f.value() - 1.0).abs() < 1e-15);
        let m = f.cell_flows();
        assert!((m.row_sums()[0] - 0.4).abs() < 1e-15);
        assert!((m.col_sums()[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn blocked_flow_and_cut() {
        // divergence 2x2 pattern, a = b = (1/3, 2/3)
        let s = SupportPattern::parse("**\n*0").unwrap();
        let f = TransportFlow::solve(&[1.0 / 3.0, 2.0 / 3.0], &[1.0 / 3.0, 2.0 / 3.0], &s);
        assert!((f.value() - 2.0 / 3.0).abs() < 1e-15);
        let (rows, cols) = f.source_side();
        assert_eq!(rows, vec![1]);
        assert_eq!(cols, vec![0]);
    }

    #[test]
    fn cycle_detection_for_positive_cells() {
        let s = SupportPattern::full(2, 2);
        let f = TransportFlow::solve(&[0.5, 0.5], &[0.5, 0.5], &s);
        for i in 0..2 {
            for j in 0..2 {
                assert!(f.cell_can_carry(i, j));
                let alt = f.rerouted_through(i, j).unwrap();
                assert!(alt[(i, j)] > 0.0);
                assert!((alt.row_sums()[0] - 0.5).abs() < 1e-15);
            }
        }
        // slow 2x2: the unique solution is anti-diagonal
        let s = SupportPattern::parse("**\n*0").unwrap();
        let f = TransportFlow::solve(&[0.5, 0.5], &[0.5, 0.5], &s);
        assert!(!f.cell_can_carry(0, 0));
        assert!(f.cell_can_carry(0, 1));
        assert!(f.cell_can_carry(1, 0));
    }
}
