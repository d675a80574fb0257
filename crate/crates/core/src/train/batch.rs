//! Size-grouped batching with padding and loss masks.

use crate::datagen::DatasetRecord;

/// One padded batch; row `b` belongs to `records[b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Positions of the batch rows in the curriculum slice.
    pub records: Vec<usize>,
    pub problem_len: usize,
    pub solution_len: usize,
    /// `rows x problem_len` node IDs, pad-filled.
    pub problem: Vec<usize>,
    /// `rows x solution_len` tokens, pad-filled.
    pub solution: Vec<usize>,
    pub problem_mask: Vec<bool>,
    pub solution_mask: Vec<bool>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.records.len()
    }

    /// Fraction of padded cells across both matrices.
    pub fn padding(&self) -> (usize, usize) {
        let cells = self.problem_mask.len() + self.solution_mask.len();
        let real = self.problem_mask.iter().chain(&self.solution_mask).filter(|&&m| m).count();
        (cells - real, cells)
    }
}

/// Cuts `order` (indices into `data`) into consecutive batches and pads each
/// one to its own maxima. Feeding a size-sorted order keeps equal sizes
/// together, so little padding is needed.
pub fn make_batches(data: &[&DatasetRecord], order: &[usize], batch_size: usize, pad_id: usize) -> Vec<Batch> {
    assert!(batch_size > 0, "batch size must be positive");
    order
        .chunks(batch_size)
        .map(|idx| {
            let problem_len = idx.iter().map(|&i| data[i].node_ids.len()).max().unwrap_or(0);
            let solution_len = idx.iter().map(|&i| data[i].tokens.len()).max().unwrap_or(0);
            let mut b = Batch {
                records: idx.to_vec(),
                problem_len,
                solution_len,
                problem: Vec::with_capacity(idx.len() * problem_len),
                solution: Vec::with_capacity(idx.len() * solution_len),
                problem_mask: Vec::with_capacity(idx.len() * problem_len),
                solution_mask: Vec::with_capacity(idx.len() * solution_len),
            };
            for &i in idx {
                let r = data[i];
                pad_into(&r.node_ids, problem_len, pad_id, &mut b.problem, &mut b.problem_mask);
                pad_into(&r.tokens, solution_len, pad_id, &mut b.solution, &mut b.solution_mask);
            }
            b
        })
        .collect()
}

fn pad_into(src: &[usize], len: usize, pad: usize, out: &mut Vec<usize>, mask: &mut Vec<bool>) {
    out.extend_from_slice(src);
    out.extend(std::iter::repeat_n(pad, len - src.len()));
    mask.extend(std::iter::repeat_n(true, src.len()));
    mask.extend(std::iter::repeat_n(false, len - src.len()));
}

/// Overall padded fraction of a batch list.
pub fn padding_fraction(batches: &[Batch]) -> f64 {
    let (pad, cells) = batches.iter().map(Batch::padding).fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if cells == 0 {
        0.0
    } else {
        pad as f64 / cells as f64
    }
}
