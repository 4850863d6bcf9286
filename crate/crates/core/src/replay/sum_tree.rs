/// Binary sum tree over a fixed number of leaves.
///
/// Internal nodes are recomputed from their children on every update rather
/// than adjusted by differences, so the root never drifts from the sum of the
/// leaves through accumulated rounding.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        SumTree { leaves, nodes: vec![0.0; 2 * leaves] }
    }

    pub fn capacity(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, mass: f64) {
        let mut node = self.leaves + i;
        self.nodes[node] = mass;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf whose cumulative-mass interval contains `mass`, together with
    /// the number of internal nodes visited on the way down.
    ///
    /// Descends right only into subtrees with positive mass, so zero-mass
    /// leaves are never returned while any positive leaf exists.
    pub fn find(&self, mut mass: f64) -> (usize, usize) {
        let mut node = 1;
        let mut visits = 0;
        while node < self.leaves {
            visits += 1;
            let left = self.nodes[2 * node];
            let right = self.nodes[2 * node + 1];
            if mass < left || right <= 0.0 {
                node *= 2;
            } else {
                mass -= left;
                node = 2 * node + 1;
            }
        }
        (node - self.leaves, visits)
    }
}
