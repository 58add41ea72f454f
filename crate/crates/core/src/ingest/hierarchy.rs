use std::collections::{HashMap, VecDeque};
use std::path::Path;

use crate::ingest::ClassTable;
use crate::{ClassId, Error, Result};

/// Is-a graph over wnids. Distances ignore edge direction.
#[derive(Clone, Debug, Default)]
pub struct Hierarchy {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    adjacent: Vec<Vec<usize>>,
}

impl Hierarchy {
    /// Builds the graph from `(parent, child)` pairs and rejects directed cycles.
    pub fn from_edges<I, S>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut h = Hierarchy::default();
        for (p, c) in edges {
            let p = h.intern(p.into());
            let c = h.intern(c.into());
            if !h.edges.contains(&(p, c)) {
                h.edges.push((p, c));
                h.adjacent[p].push(c);
                h.adjacent[c].push(p);
            }
        }
        h.check_acyclic()?;
        Ok(h)
    }

    /// Reads `parent_wnid<TAB>child_wnid` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut edges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(p), Some(c), None) if !p.trim().is_empty() && !c.trim().is_empty() => {
                    edges.push((p.trim().to_owned(), c.trim().to_owned()))
                }
                _ => {
                    return Err(Error::Parse {
                        path: path.to_owned(),
                        line: n + 1,
                        message: "expected parent<TAB>child".into(),
                    })
                }
            }
        }
        Hierarchy::from_edges(edges)
    }

    pub fn to_tsv(&self) -> String {
        self.edges
            .iter()
            .map(|&(p, c)| format!("{}\t{}\n", self.nodes[p], self.nodes[c]))
            .collect()
    }

    fn intern(&mut self, wnid: String) -> usize {
        if let Some(&i) = self.index.get(&wnid) {
            return i;
        }
        let i = self.nodes.len();
        self.index.insert(wnid.clone(), i);
        self.nodes.push(wnid);
        self.adjacent.push(Vec::new());
        i
    }

    fn check_acyclic(&self) -> Result<()> {
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut children = vec![Vec::new(); self.nodes.len()];
        for &(p, c) in &self.edges {
            indegree[c] += 1;
            children[p].push(c);
        }
        let mut queue: VecDeque<usize> = (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut visited = 0;
        while let Some(n) = queue.pop_front() {
            visited += 1;
            for &c in &children[n] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if visited == self.nodes.len() {
            Ok(())
        } else {
            let stuck = (0..self.nodes.len()).find(|&i| indegree[i] > 0).unwrap();
            Err(Error::CyclicHierarchy(self.nodes[stuck].clone()))
        }
    }

    pub fn contains(&self, wnid: &str) -> bool {
        self.index.contains_key(wnid)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges
            .iter()
            .map(|&(p, c)| (self.nodes[p].as_str(), self.nodes[c].as_str()))
    }

    /// Every class wnid must be a node.
    pub fn check_covers(&self, classes: &ClassTable) -> Result<()> {
        for (_, e) in classes.iter() {
            if !self.contains(&e.wnid) {
                return Err(Error::MissingHierarchyNode(e.wnid.clone()));
            }
        }
        Ok(())
    }

    fn node(&self, wnid: &str) -> Result<usize> {
        self.index
            .get(wnid)
            .copied()
            .ok_or_else(|| Error::UnknownNode(wnid.to_owned()))
    }

    fn bfs(&self, from: usize) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.nodes.len()];
        dist[from] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            let d = dist[n].unwrap();
            for &m in &self.adjacent[n] {
                if dist[m].is_none() {
                    dist[m] = Some(d + 1);
                    queue.push_back(m);
                }
            }
        }
        dist
    }
}

/// Undirected shortest-path length between two nodes. `Ok(None)` means the
/// nodes are in different components; callers treat that as infinitely far.
pub fn hierarchy_distance(h: &Hierarchy, a: &str, b: &str) -> Result<Option<u32>> {
    let a = h.node(a)?;
    let b = h.node(b)?;
    if a == b {
        return Ok(Some(0));
    }
    Ok(h.bfs(a)[b])
}

/// Precomputed class-to-class hierarchy distances.
#[derive(Clone, Debug)]
pub struct ClassDistances {
    n: usize,
    // u32::MAX marks an unreachable pair
    dist: Vec<u32>,
}

impl ClassDistances {
    pub fn new(h: &Hierarchy, classes: &ClassTable) -> Result<Self> {
        let n = classes.len();
        let nodes: Vec<usize> = classes
            .iter()
            .map(|(_, e)| h.node(&e.wnid))
            .collect::<Result<_>>()?;
        let mut dist = vec![u32::MAX; n * n];
        for (i, &src) in nodes.iter().enumerate() {
            let d = h.bfs(src);
            for (j, &dst) in nodes.iter().enumerate() {
                if let Some(v) = d[dst] {
                    dist[i * n + j] = v;
                }
            }
        }
        Ok(ClassDistances { n, dist })
    }

    /// `None` when unreachable.
    pub fn get(&self, a: ClassId, b: ClassId) -> Option<u32> {
        let v = self.dist[a.index() * self.n + b.index()];
        (v != u32::MAX).then_some(v)
    }

    /// True when the classes are more than `hops` apart (or disconnected).
    pub fn farther_than(&self, a: ClassId, b: ClassId, hops: u32) -> bool {
        self.get(a, b).map_or(true, |d| d > hops)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}
