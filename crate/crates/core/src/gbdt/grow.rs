use super::data::BinnedData;
use super::{GbdtParams, TreeNode};

/// Relative slack under which two gains count as tied, so that summation
/// order noise cannot override the (feature, bin) tie rule.
const TIE_EPS: f64 = 1e-9;

#[inline]
fn beats(gain: f64, best: f64) -> bool {
    gain > best + TIE_EPS * best.abs()
}

#[derive(Clone, Copy, Default, Debug)]
struct Stat {
    g: f64,
    h: f64,
    n: u32,
}

impl Stat {
    #[inline]
    fn add(&mut self, o: Stat) {
        self.g += o.g;
        self.h += o.h;
        self.n += o.n;
    }

    #[inline]
    fn sub(self, o: Stat) -> Stat {
        Stat {
            g: self.g - o.g,
            h: self.h - o.h,
            n: self.n - o.n,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Split {
    gain: f64,
    feature: usize,
    /// 0 separates nulls from all values; j >= 1 sends value bins 1..=j left.
    bin: usize,
    missing_left: bool,
    left: Stat,
}

enum Node {
    Leaf(f64),
    Internal {
        feature: usize,
        threshold: f32,
        missing_left: bool,
        gain: f64,
        left: usize,
        right: usize,
    },
}

struct Leaf {
    node: usize,
    depth: usize,
    rows: Vec<u32>,
    hist: Vec<Stat>,
    total: Stat,
    best: Option<Split>,
}

pub(crate) struct Grower<'a> {
    data: &'a BinnedData,
    params: &'a GbdtParams,
    offsets: Vec<usize>,
    hist_len: usize,
}

impl<'a> Grower<'a> {
    pub fn new(data: &'a BinnedData, params: &'a GbdtParams) -> Self {
        let mut offsets = Vec::with_capacity(data.mappers.len());
        let mut off = 0;
        for m in &data.mappers {
            offsets.push(off);
            off += m.n_value_bins() + 1;
        }
        Grower {
            data,
            params,
            offsets,
            hist_len: off,
        }
    }

    fn histogram(&self, rows: &[u32], grad: &[f64], hess: &[f64]) -> Vec<Stat> {
        let mut hist = vec![Stat::default(); self.hist_len];
        let g: Vec<f64> = rows.iter().map(|&r| grad[r as usize]).collect();
        let h: Vec<f64> = rows.iter().map(|&r| hess[r as usize]).collect();
        for (f, col) in self.data.bins.iter().enumerate() {
            let hf = &mut hist[self.offsets[f]..];
            for (k, &r) in rows.iter().enumerate() {
                let s = &mut hf[col[r as usize] as usize];
                s.g += g[k];
                s.h += h[k];
                s.n += 1;
            }
        }
        hist
    }

    fn gain(&self, left: Stat, total: Stat) -> f64 {
        let l2 = self.params.lambda_l2;
        let right = total.sub(left);
        left.g * left.g / (left.h + l2) + right.g * right.g / (right.h + l2) - total.g * total.g / (total.h + l2)
    }

    fn best_split(&self, hist: &[Stat], total: Stat) -> Option<Split> {
        let min_leaf = (self.params.min_samples_leaf as u32).max(1);
        let mut best: Option<Split> = None;
        let mut consider = |left: Stat, feature: usize, bin: usize, missing_left: bool| {
            if left.n < min_leaf || total.n - left.n < min_leaf {
                return;
            }
            let gain = self.gain(left, total);
            if gain.is_nan() || gain <= self.params.min_gain {
                return;
            }
            if best.is_none_or(|b| beats(gain, b.gain)) {
                best = Some(Split {
                    gain,
                    feature,
                    bin,
                    missing_left,
                    left,
                });
            }
        };
        for (f, m) in self.data.mappers.iter().enumerate() {
            let nb = m.n_value_bins();
            if nb == 0 {
                continue;
            }
            let hf = &hist[self.offsets[f]..self.offsets[f] + nb + 1];
            let null = hf[0];
            if null.n > 0 {
                consider(null, f, 0, true);
            }
            let mut cum = Stat::default();
            for (j, &h) in hf.iter().enumerate().take(nb).skip(1) {
                cum.add(h);
                let mut with_null = cum;
                with_null.add(null);
                consider(with_null, f, j, true);
                if null.n > 0 {
                    consider(cum, f, j, false);
                }
            }
        }
        best
    }

    fn make_leaf(&self, node: usize, depth: usize, rows: Vec<u32>, hist: Vec<Stat>, total: Stat) -> Leaf {
        let best = if depth < self.params.max_depth {
            self.best_split(&hist, total)
        } else {
            None
        };
        Leaf {
            node,
            depth,
            rows,
            hist,
            total,
            best,
        }
    }

    /// Grows one tree on the given gradients and adds its output to `scores`.
    pub fn grow(&self, grad: &[f64], hess: &[f64], scores: &mut [f64]) -> TreeNode {
        let n = grad.len();
        let rows: Vec<u32> = (0..n as u32).collect();
        let hist = self.histogram(&rows, grad, hess);
        let total = rows.iter().fold(Stat::default(), |mut t, &r| {
            t.add(Stat {
                g: grad[r as usize],
                h: hess[r as usize],
                n: 1,
            });
            t
        });
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut leaves = vec![self.make_leaf(0, 0, rows, hist, total)];

        while leaves.len() < self.params.max_leaves {
            let mut pick: Option<usize> = None;
            for (i, l) in leaves.iter().enumerate() {
                if let Some(s) = l.best {
                    if pick.is_none_or(|p| beats(s.gain, leaves[p].best.unwrap().gain)) {
                        pick = Some(i);
                    }
                }
            }
            let Some(i) = pick else { break };
            let leaf = leaves.remove(i);
            let split = leaf.best.expect("picked leaves have a split");
            let col = &self.data.bins[split.feature];
            let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = leaf.rows.iter().partition(|&&r| {
                let b = col[r as usize] as usize;
                if b == 0 {
                    split.missing_left
                } else {
                    b <= split.bin
                }
            });
            let left_total = split.left;
            let right_total = leaf.total.sub(split.left);
            let (small, small_is_left) = if left_rows.len() <= right_rows.len() {
                (&left_rows, true)
            } else {
                (&right_rows, false)
            };
            let small_hist = self.histogram(small, grad, hess);
            let mut big_hist = leaf.hist;
            for (b, s) in big_hist.iter_mut().zip(&small_hist) {
                *b = b.sub(*s);
            }
            let (left_hist, right_hist) = if small_is_left {
                (small_hist, big_hist)
            } else {
                (big_hist, small_hist)
            };

            let threshold = if split.bin == 0 {
                f32::NEG_INFINITY
            } else {
                self.data.mappers[split.feature].lower[split.bin]
            };
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf(0.0));
            nodes.push(Node::Leaf(0.0));
            nodes[leaf.node] = Node::Internal {
                feature: split.feature,
                threshold,
                missing_left: split.missing_left,
                gain: split.gain,
                left: li,
                right: ri,
            };
            let d = leaf.depth + 1;
            // Leaves stay in left-to-right order, which is the order gain ties
            // are broken in.
            leaves.insert(i, self.make_leaf(li, d, left_rows, left_hist, left_total));
            leaves.insert(i + 1, self.make_leaf(ri, d, right_rows, right_hist, right_total));
        }

        for l in &leaves {
            let v = -l.total.g / (l.total.h + self.params.lambda_l2) * self.params.learning_rate;
            nodes[l.node] = Node::Leaf(v);
            for &r in &l.rows {
                scores[r as usize] += v;
            }
        }
        to_tree(&nodes, 0)
    }
}

fn to_tree(nodes: &[Node], i: usize) -> TreeNode {
    match nodes[i] {
        Node::Leaf(value) => TreeNode::Leaf { value },
        Node::Internal {
            feature,
            threshold,
            missing_left,
            gain,
            left,
            right,
        } => TreeNode::Internal {
            feature,
            threshold,
            missing_goes_left: missing_left,
            gain,
            left: Box::new(to_tree(nodes, left)),
            right: Box::new(to_tree(nodes, right)),
        },
    }
}
