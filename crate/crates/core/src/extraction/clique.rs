//! Maximum clique search over small dense graphs stored as bitsets.

/// Fixed-width bitset over `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bits {
    words: Vec<u64>,
}

impl Bits {
    pub fn empty(n: usize) -> Self {
        Bits {
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn full(n: usize) -> Self {
        let mut b = Bits::empty(n);
        for i in 0..n {
            b.insert(i);
        }
        b
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn first(&self) -> Option<usize> {
        self.words
            .iter()
            .position(|&w| w != 0)
            .map(|wi| wi * 64 + self.words[wi].trailing_zeros() as usize)
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn and(&self, other: &Bits) -> Bits {
        Bits {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }
}

/// Result of a clique search. `exact` is false when the greedy fallback ran.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clique {
    pub nodes: Vec<usize>,
    pub exact: bool,
}

/// Largest graph solved exactly; above this a greedy clique is returned.
pub const EXACT_LIMIT: usize = 500;

/// Maximum clique of the graph with adjacency rows `adj` (symmetric, no
/// self-loops). Nodes are returned ascending.
pub fn max_clique(adj: &[Bits]) -> Clique {
    let n = adj.len();
    if n == 0 {
        return Clique {
            nodes: vec![],
            exact: true,
        };
    }
    if n > EXACT_LIMIT {
        return Clique {
            nodes: greedy(adj),
            exact: false,
        };
    }
    let mut best = greedy(adj);
    let mut current = Vec::new();
    expand(adj, &mut current, Bits::full(n), &mut best);
    best.sort_unstable();
    Clique {
        nodes: best,
        exact: true,
    }
}

/// Greedy colouring of `p` in ascending vertex order: returns vertices with
/// their colour number, ordered by colour. The colour of a vertex bounds the
/// clique size reachable among it and the vertices before it.
fn colour_order(adj: &[Bits], p: &Bits) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(p.count());
    let mut uncoloured = p.clone();
    let mut colour = 0;
    while !uncoloured.is_empty() {
        colour += 1;
        let mut avail = uncoloured.clone();
        while let Some(v) = avail.first() {
            avail.remove(v);
            uncoloured.remove(v);
            for (w, a) in avail.words.iter_mut().zip(&adj[v].words) {
                *w &= !a;
            }
            out.push((v, colour));
        }
    }
    out
}

fn expand(adj: &[Bits], current: &mut Vec<usize>, mut p: Bits, best: &mut Vec<usize>) {
    let order = colour_order(adj, &p);
    for &(v, colour) in order.iter().rev() {
        if current.len() + colour <= best.len() {
            return;
        }
        current.push(v);
        let next = p.and(&adj[v]);
        if next.is_empty() {
            if current.len() > best.len() {
                *best = current.clone();
            }
        } else {
            expand(adj, current, next, best);
        }
        current.pop();
        p.remove(v);
    }
}

/// Repeatedly adds the candidate with the most neighbors among the remaining
/// candidates, starting from every vertex; keeps the largest result.
fn greedy(adj: &[Bits]) -> Vec<usize> {
    let n = adj.len();
    let mut best: Vec<usize> = Vec::new();
    let starts: Vec<usize> = if n > EXACT_LIMIT {
        let mut by_degree: Vec<usize> = (0..n).collect();
        by_degree.sort_by_key(|&v| (std::cmp::Reverse(adj[v].count()), v));
        by_degree.truncate(64);
        by_degree
    } else {
        (0..n).collect()
    };
    for s in starts {
        let mut clique = vec![s];
        let mut cand = adj[s].clone();
        while !cand.is_empty() {
            let v = cand
                .iter()
                .max_by_key(|&v| (adj[v].and(&cand).count(), std::cmp::Reverse(v)))
                .expect("non-empty");
            clique.push(v);
            cand = cand.and(&adj[v]);
        }
        if clique.len() > best.len() {
            best = clique;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Vec<Bits> {
        let mut adj = vec![Bits::empty(n); n];
        for &(a, b) in edges {
            adj[a].insert(b);
            adj[b].insert(a);
        }
        adj
    }

    fn brute(adj: &[Bits]) -> usize {
        let n = adj.len();
        let mut best = 0;
        for mask in 0u32..1 << n {
            let nodes: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            if nodes.len() > best
                && nodes
                    .iter()
                    .all(|&a| nodes.iter().all(|&b| a == b || adj[a].contains(b)))
            {
                best = nodes.len();
            }
        }
        best
    }

    #[test]
    fn trivial_graphs() {
        assert_eq!(max_clique(&graph(5, &[])).nodes.len(), 1);
        let all: Vec<_> = (0..10)
            .flat_map(|a| (a + 1..10).map(move |b| (a, b)))
            .collect();
        assert_eq!(
            max_clique(&graph(10, &all)).nodes,
            (0..10).collect::<Vec<_>>()
        );
        assert!(max_clique(&[]).nodes.is_empty());
    }

    #[test]
    fn random_graphs_match_enumeration() {
        let mut rng = crate::seed::rng(4);
        for _ in 0..60 {
            let n = rng.random_range(1..=14);
            let p = rng.random_range(0.1..0.9);
            let edges: Vec<_> = (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .filter(|_| rng.random_bool(p))
                .collect();
            let adj = graph(n, &edges);
            let c = max_clique(&adj);
            assert!(c.exact);
            assert_eq!(c.nodes.len(), brute(&adj));
            assert!(c
                .nodes
                .iter()
                .all(|&a| c.nodes.iter().all(|&b| a == b || adj[a].contains(b))));
        }
    }

    #[test]
    fn bitset_iteration() {
        let mut b = Bits::empty(130);
        for i in [0, 63, 64, 129] {
            b.insert(i);
        }
        assert_eq!(b.iter().collect::<Vec<_>>(), vec![0, 63, 64, 129]);
        assert_eq!(b.count(), 4);
    }
}
