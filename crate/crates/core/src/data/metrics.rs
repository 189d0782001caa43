use crate::error::{contract_err, Error, Result};

/// Counts with rows = true class, columns = predicted class (both 0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub per_class: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return contract_err(format!("{} counts for a {k}×{k} matrix", counts.len()));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    /// Tallies `(truth, prediction)` pairs.
    pub fn from_pairs(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(k);
        for (t, p) in pairs {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.k || predicted >= self.k {
            return contract_err(format!(
                "class pair ({truth}, {predicted}) outside 0..{}",
                self.k
            ));
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.k..(c + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, c)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    /// Overall accuracy, average per-class accuracy and Cohen's kappa with
    /// `p_e = Σ row_c·col_c / total²`.
    pub fn metrics(&self) -> Result<Metrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Numeric("empty confusion matrix".into()));
        }
        let n = total as f64;
        let oa = self.trace() as f64 / n;
        let mut per_class = Vec::with_capacity(self.k);
        for c in 0..self.k {
            let row = self.row_sum(c);
            if row == 0 {
                return Err(Error::Numeric(format!(
                    "class {c} has no samples; average accuracy undefined"
                )));
            }
            per_class.push(self.get(c, c) as f64 / row as f64);
        }
        let aa = per_class.iter().sum::<f64>() / self.k as f64;
        let pe_num: u128 = (0..self.k)
            .map(|c| self.row_sum(c) as u128 * self.col_sum(c) as u128)
            .sum();
        let tt = total as u128 * total as u128;
        if pe_num == tt {
            return Err(Error::Numeric(
                "chance agreement is 1; kappa undefined".into(),
            ));
        }
        // exact in integers: kappa = (n·trace − Σ row·col) / (n² − Σ row·col)
        let num = total as i128 * self.trace() as i128 - pe_num as i128;
        let kappa = num as f64 / (tt - pe_num) as f64;
        Ok(Metrics {
            oa,
            aa,
            kappa,
            per_class,
        })
    }
}
